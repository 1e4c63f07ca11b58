import numpy as np
import pytest
import torch

from domain_game.common.exceptions import CheckpointError, ShapeMismatchError
from domain_game.common.geometry import sample_transform_set
from domain_game.models.checkpoint import load_nets, read_checkpoint, save_checkpoint
from domain_game.models.nets import DomainGameNets, NetConfig
from domain_game.training.game import TrainConfig, compute_objective


@pytest.fixture
def nets(tiny_net_config):
    torch.manual_seed(0)
    return DomainGameNets(tiny_net_config)


def test_feature_shapes(nets, tiny_net_config):
    windows = torch.rand(5, 3, 16, 16)
    pair = nets.encode(windows)
    assert pair.x_map.shape == (5, 8, 4, 4)
    assert pair.delta_vec.shape == (5, 4)
    assert nets.decode_segmentation(pair.x_map).shape == (5, 2, 16, 16)
    assert nets.decode_reconstruction(pair.delta_vec, pair.x_map).shape == (5, 3, 16, 16)
    assert nets.predict_masks(windows).shape == (5, 16, 16)


def test_unbatched_windows_stay_unbatched(nets):
    window = torch.rand(3, 16, 16)
    assert nets.encode_x(window).shape == (8, 4, 4)
    assert nets.encode_delta(window).shape == (4,)
    assert nets.swap_reconstruction(window, torch.rand(3, 16, 16)).shape == (3, 16, 16)


def test_zero_head_maps_an_empty_window_to_zero(nets):
    with torch.no_grad():
        nets.encoder_x.trunk.head.weight.zero_()
        nets.encoder_x.trunk.head.bias.zero_()
        x_map = nets.encode_x(torch.zeros(1, 3, 16, 16))
    assert x_map.shape == (1, 8, 4, 4)
    assert torch.count_nonzero(x_map) == 0


@pytest.mark.parametrize("shape", [(2, 1, 16, 16), (2, 3, 12, 12), (16, 16)])
def test_wrong_window_shape_names_expected_and_actual(nets, shape):
    with pytest.raises(ShapeMismatchError) as info:
        nets.encode_x(torch.rand(*shape))
    assert "expected" in info.value.detail and str(list(shape)) in info.value.detail


def test_wrong_domain_vector_shape_fails(nets):
    with pytest.raises(ShapeMismatchError):
        nets.decode_reconstruction(torch.rand(2, 5), torch.rand(2, 8, 4, 4))


def test_image_size_must_match_depth():
    with pytest.raises(ShapeMismatchError):
        DomainGameNets(NetConfig(depth=3, image_size=20))


def test_reconstruction_ignores_the_domain_vector_at_initialisation(nets):
    x_map = torch.rand(2, 8, 4, 4)
    a = nets.decode_reconstruction(torch.rand(2, 4), x_map)
    b = nets.decode_reconstruction(torch.rand(2, 4), x_map)
    assert torch.equal(a, b)


def test_swap_reconstruction_uses_the_second_windows_domain(nets):
    for modulation in nets.decoder_i.modulations:
        torch.nn.init.normal_(modulation.linear.weight)
    a, b = torch.rand(3, 16, 16), torch.rand(3, 16, 16) * 0.2
    swapped = nets.swap_reconstruction(a, b)
    expected = nets.decode_reconstruction(nets.encode_delta(b), nets.encode_x(a))
    assert torch.equal(swapped, expected)
    assert not torch.equal(swapped, nets.decode_reconstruction(nets.encode_delta(a), nets.encode_x(a)))


def test_parameter_report_is_stable(tiny_net_config):
    first = DomainGameNets(tiny_net_config).parameter_report()
    second = DomainGameNets(tiny_net_config).parameter_report()
    assert first == second
    assert first["total"] == sum(v for k, v in first.items() if k != "total")
    assert set(first) == {"encoder_x", "encoder_delta", "decoder_y", "decoder_i", "total"}


def test_phase_modules_partition_the_parameters(nets):
    a = {id(p) for m in nets.phase_a_modules for p in m.parameters()}
    b = {id(p) for m in nets.phase_b_modules for p in m.parameters()}
    assert not a & b
    assert a | b == {id(p) for p in nets.parameters()}


def test_checkpoint_round_trip(tmp_path, nets):
    path = str(tmp_path / "ckpt" / "model.pt")
    save_checkpoint({"net_config": nets.config.model_dump(), "nets": nets.state_dict()}, path)
    restored, payload = load_nets(path)
    assert payload["format_version"] == 1
    windows = torch.rand(2, 3, 16, 16)
    assert torch.equal(restored.predict_masks(windows), nets.predict_masks(windows))


def test_missing_checkpoint_fails(tmp_path):
    with pytest.raises(CheckpointError):
        read_checkpoint(str(tmp_path / "absent.pt"))


def test_checkpoint_version_is_checked(tmp_path):
    path = str(tmp_path / "old.pt")
    torch.save({"format_version": 0}, path)
    with pytest.raises(CheckpointError) as info:
        read_checkpoint(path)
    assert "format_version=0" in info.value.detail


def test_objective_gradients_match_finite_differences():
    torch.manual_seed(0)
    config = NetConfig(base_channels=2, depth=1, x_channels=4, delta_dim=2, num_classes=2, image_size=8)
    nets = DomainGameNets(config).double()
    for modulation in nets.decoder_i.modulations:
        torch.nn.init.normal_(modulation.linear.weight, std=0.1)
    generator = torch.Generator().manual_seed(1)
    images = torch.rand(1, 3, 8, 8, generator=generator, dtype=torch.float64)
    labels = (torch.rand(1, 8, 8, generator=generator) > 0.5).long()
    transforms = [sample_transform_set(3, np.random.default_rng(2))]
    train_config = TrainConfig()

    def objective():
        return compute_objective(nets, images, labels, transforms, swap_index=1, config=train_config).total

    nets.zero_grad()
    objective().backward()
    params = [p for p in nets.parameters()]
    rng = np.random.default_rng(3)
    checked = 0
    h = 1e-6
    while checked < 60:
        p = params[int(rng.integers(len(params)))]
        index = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = float(p.grad[index])
        with torch.no_grad():
            original = float(p[index])
            p[index] = original + h
            plus = float(objective())
            p[index] = original - h
            minus = float(objective())
            p[index] = original
        numeric = (plus - minus) / (2 * h)
        assert abs(analytic - numeric) <= 1e-3 * max(abs(analytic), abs(numeric)) + 1e-7, (p.shape, index)
        checked += 1
