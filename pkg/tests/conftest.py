import numpy as np
import pytest

from domain_game.data.synthdata import BenchmarkConfig, make_benchmark, sliding_windows, write_benchmark
from domain_game.models.nets import NetConfig
from domain_game.training.game import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_benchmark_config():
    return BenchmarkConfig(
        depth=4,
        image_size=16,
        num_classes=2,
        n_source_samples=10,
        n_target_samples=3,
        target_styles=["lowfield", "bright"],
        seed=7,
    )


@pytest.fixture(scope="session")
def tiny_net_config():
    return NetConfig(base_channels=4, depth=2, x_channels=8, delta_dim=4, num_classes=2, image_size=16)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(epochs=2, batch_size=4, n_transforms=2, learning_rate=1e-3, seed=3)


@pytest.fixture(scope="session")
def tiny_benchmark(tiny_benchmark_config):
    return make_benchmark(tiny_benchmark_config)


@pytest.fixture(scope="session")
def tiny_data_dir(tmp_path_factory, tiny_benchmark):
    out_dir = tmp_path_factory.mktemp("benchmark")
    manifest, samples = tiny_benchmark
    write_benchmark(str(out_dir), manifest, samples)
    return str(out_dir)


@pytest.fixture(scope="session")
def tiny_windows(tiny_benchmark):
    manifest, samples = tiny_benchmark
    windows = []
    for sample_id in manifest.splits[manifest.source_domain.domain_id]["train"][:2]:
        anatomy, image = samples[sample_id]
        windows.extend(sliding_windows(image, anatomy.labels, sample_id))
    return windows
