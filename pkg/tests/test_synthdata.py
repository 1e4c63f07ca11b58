import os

import numpy as np
import pytest
from scipy import stats

from domain_game.common.exceptions import InvalidBenchmarkConfiguration, MissingSampleError
from domain_game.data.synthdata import (
    BenchmarkConfig,
    DomainStyle,
    generate_anatomy,
    get_style,
    load_manifest,
    load_samples,
    load_windows,
    make_benchmark,
    render_domain,
    sample_generator,
    sliding_windows,
    split_counts,
)


def test_split_counts():
    assert split_counts(20) == {"train": 14, "val": 2, "test": 4}
    assert split_counts(10) == {"train": 7, "val": 1, "test": 2}


def test_too_few_source_samples_names_the_minimum():
    with pytest.raises(InvalidBenchmarkConfiguration) as info:
        split_counts(9)
    assert "10" in info.value.detail


def test_nested_classes_stay_inside_their_parent():
    for index in range(5):
        anatomy = generate_anatomy(sample_generator(0, 0, index), 6, 24, 24, num_classes=3)
        labels = anatomy.labels
        assert set(np.unique(labels)) == {0, 1, 2}
        inner = labels == 2
        # every class-2 pixel has an in-plane 3x3 neighbourhood of foreground
        padded = np.pad(labels >= 1, ((0, 0), (1, 1), (1, 1)))
        for d, y, x in zip(*np.nonzero(inner)):
            assert padded[d, y : y + 3, x : x + 3].all()


def test_anatomy_volume_is_the_tissue_lookup():
    anatomy = generate_anatomy(sample_generator(1, 0, 0), 4, 16, 16, num_classes=2)
    np.testing.assert_array_equal(anatomy.volume[anatomy.labels == 0], 0.15)
    np.testing.assert_array_equal(anatomy.volume[anatomy.labels == 1], 0.55)


def test_identity_style_reproduces_the_template():
    anatomy = generate_anatomy(sample_generator(2, 0, 0), 4, 16, 16, num_classes=2)
    image = render_domain(anatomy, DomainStyle(domain_id="plain"), np.random.default_rng(0))
    np.testing.assert_array_equal(image, anatomy.volume)


def test_identity_style_leaves_the_generator_untouched():
    anatomy = generate_anatomy(sample_generator(2, 0, 0), 4, 16, 16, num_classes=2)
    rng = np.random.default_rng(0)
    before = rng.bit_generator.state
    render_domain(anatomy, DomainStyle(domain_id="plain"), rng)
    assert rng.bit_generator.state == before


def test_strong_bias_field_with_fractional_gamma_stays_finite():
    anatomy = generate_anatomy(sample_generator(3, 0, 0), 6, 24, 24, num_classes=3)
    style = DomainStyle(domain_id="harsh", gamma=0.7, contrast=1.4, bias_field_amplitude=0.99, noise_sigma=0.05)
    for seed in range(10):
        image = render_domain(anatomy, style, np.random.default_rng(seed))
        assert np.isfinite(image).all()
        unclipped = render_domain(anatomy, style, np.random.default_rng(seed), clip=False)
        assert np.isfinite(unclipped).all()


@pytest.mark.parametrize("amplitude", [1.0, 1.5])
def test_bias_field_amplitude_must_stay_below_one(amplitude):
    with pytest.raises(ValueError):
        DomainStyle(domain_id="harsh", bias_field_amplitude=amplitude)


def test_foreground_fraction_is_plausible_across_seeds():
    for seed in range(100):
        labels = generate_anatomy(sample_generator(seed, 0, 0), 8, 32, 32, num_classes=2).labels
        assert 0.02 <= (labels > 0).mean() <= 0.45, seed


def test_rendered_intensities_are_clipped(tiny_benchmark):
    _, samples = tiny_benchmark
    for _, image in samples.values():
        assert image.min() >= 0.0 and image.max() <= 1.0


def test_style_without_intensity_for_a_class_fails():
    anatomy = generate_anatomy(sample_generator(3, 0, 0), 4, 16, 16, num_classes=2)
    style = DomainStyle(domain_id="partial", tissue_intensities={0: 0.1})
    with pytest.raises(InvalidBenchmarkConfiguration):
        render_domain(anatomy, style, np.random.default_rng(0))


def test_sliding_windows_replicate_edges():
    volume = np.arange(4, dtype=np.float32)[:, None, None] * np.ones((4, 2, 2), dtype=np.float32)
    labels = np.zeros((4, 2, 2), dtype=np.int64)
    windows = sliding_windows(volume, labels, "v")
    assert [w.center_index for w in windows] == [0, 1, 2, 3]
    np.testing.assert_array_equal(windows[0].window[:, 0, 0], [0, 0, 1])
    np.testing.assert_array_equal(windows[3].window[:, 0, 0], [2, 3, 3])
    assert windows[1].window.dtype == np.float32 and windows[1].center_label.dtype == np.int64


def test_benchmark_is_deterministic(tiny_benchmark_config):
    manifest_a, samples_a = make_benchmark(tiny_benchmark_config)
    manifest_b, samples_b = make_benchmark(tiny_benchmark_config)
    assert manifest_a.to_yaml() == manifest_b.to_yaml()
    for sample_id, (anatomy, image) in samples_a.items():
        np.testing.assert_array_equal(image, samples_b[sample_id][1])
        np.testing.assert_array_equal(anatomy.labels, samples_b[sample_id][0].labels)


def test_parallel_generation_matches_serial(tiny_benchmark_config, tiny_benchmark):
    _, serial = tiny_benchmark
    _, parallel = make_benchmark(tiny_benchmark_config.model_copy(update={"workers": 2}))
    for sample_id, (_, image) in serial.items():
        np.testing.assert_array_equal(image, parallel[sample_id][1])


def test_source_split_is_a_partition(tiny_benchmark):
    manifest, _ = tiny_benchmark
    split = manifest.splits[manifest.source_domain.domain_id]
    ids = split["train"] + split["val"] + split["test"]
    assert len(ids) == len(set(ids)) == 10
    assert (len(split["train"]), len(split["val"]), len(split["test"])) == (7, 1, 2)
    for target in manifest.target_domains:
        assert len(manifest.splits[target.domain_id]["test"]) == 3


def test_paired_targets_reuse_the_source_test_anatomies(tiny_benchmark_config):
    config = tiny_benchmark_config.model_copy(update={"paired_targets": True})
    manifest, samples = make_benchmark(config)
    source_test = manifest.splits["source"]["test"]
    for target in manifest.target_domains:
        target_ids = manifest.splits[target.domain_id]["test"]
        assert len(target_ids) == len(source_test)
        for source_id, target_id in zip(source_test, target_ids):
            np.testing.assert_array_equal(samples[source_id][0].labels, samples[target_id][0].labels)
            assert not np.array_equal(samples[source_id][1], samples[target_id][1])


def test_evaluated_classes_must_exist(tiny_benchmark_config):
    config = tiny_benchmark_config.model_copy(update={"target_styles": ["pediatric"]})
    with pytest.raises(InvalidBenchmarkConfiguration):
        make_benchmark(config)


def test_pediatric_target_with_three_classes():
    config = BenchmarkConfig(depth=4, image_size=16, num_classes=3, n_source_samples=10, n_target_samples=2, target_styles=["pediatric"])
    manifest, _ = make_benchmark(config)
    assert manifest.domain("pediatric").evaluated_classes == [2]


def test_unknown_config_keys_are_rejected():
    with pytest.raises(ValueError):
        BenchmarkConfig(n_sources=3)


def test_write_and_load(tiny_data_dir, tiny_benchmark):
    manifest, samples = tiny_benchmark
    assert load_manifest(tiny_data_dir) == manifest
    sample_id = manifest.splits["source"]["train"][0]
    (volume, labels, loaded_id), = load_samples(tiny_data_dir, [sample_id])
    assert loaded_id == sample_id
    np.testing.assert_array_equal(labels, samples[sample_id][0].labels)
    np.testing.assert_allclose(volume, samples[sample_id][1].astype(np.float32))
    assert len(load_windows(tiny_data_dir, [sample_id])) == manifest.depth


def test_missing_samples_are_named(tiny_data_dir):
    with pytest.raises(MissingSampleError) as info:
        load_samples(tiny_data_dir, ["source-0000", "nowhere-1", "nowhere-2"])
    assert info.value.sample_ids == ["nowhere-1", "nowhere-2"]
    assert "nowhere-1" in info.value.detail


def test_manifest_is_written_with_sorted_keys(tiny_data_dir):
    with open(os.path.join(tiny_data_dir, "manifest.yaml")) as handle:
        text = handle.read()
    top_level = [line.split(":")[0] for line in text.splitlines() if line and not line.startswith((" ", "-"))]
    assert top_level == sorted(top_level)


def test_brightness_bias_shifts_every_pixel():
    anatomy = generate_anatomy(sample_generator(4, 0, 0), 4, 16, 16, num_classes=2)
    plain = render_domain(anatomy, DomainStyle(domain_id="plain"), np.random.default_rng(0), clip=False)
    brighter = render_domain(anatomy, DomainStyle(domain_id="brighter", brightness_bias=0.1), np.random.default_rng(0), clip=False)
    np.testing.assert_allclose(brighter - plain, 0.1, atol=1e-12)


def test_styles_change_the_intensity_histogram():
    anatomy = generate_anatomy(sample_generator(5, 0, 0), 8, 32, 32, num_classes=2)
    source = render_domain(anatomy, get_style("source"), np.random.default_rng(1))
    lowfield = render_domain(anatomy, get_style("lowfield"), np.random.default_rng(1))
    assert stats.ks_2samp(source.ravel(), lowfield.ravel()).statistic > 0.1
