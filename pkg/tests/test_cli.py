import os

import pydantic
import pytest
import torch
import yaml

from domain_game.cli.config import RunConfigFile
from domain_game.cli.main import main
from domain_game.common.configuration import DomainGameSettings
from domain_game.data.synthdata import load_manifest
from domain_game.evaluation.metrics import (
    DomainMetrics,
    MetricsReport,
    collect_examples,
    oracle_predictor,
    save_examples,
)

TINY_RUN = {
    "data": {
        "depth": 4,
        "image_size": 16,
        "num_classes": 2,
        "n_source_samples": 10,
        "n_target_samples": 2,
        "target_styles": ["lowfield"],
        "seed": 5,
    },
    "model": {"base_channels": 4, "depth": 2, "x_channels": 8, "delta_dim": 4, "num_classes": 2, "image_size": 16},
    "training": {"epochs": 1, "batch_size": 8, "n_transforms": 2, "learning_rate": 1.0e-3},
}


def _write_config(path, document):
    with open(path, "w") as handle:
        yaml.safe_dump(document, handle)
    return str(path)


@pytest.fixture
def no_data_root(monkeypatch):
    monkeypatch.delenv("DOMAIN_GAME_DATA_ROOT", raising=False)
    DomainGameSettings.get_instance.cache_clear()
    yield
    DomainGameSettings.get_instance.cache_clear()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "generate-data" in capsys.readouterr().out


def test_unknown_command_is_a_usage_error():
    assert main(["fly"]) == 1


def test_missing_required_option_is_a_usage_error():
    assert main(["evaluate", "--out", "report.csv"]) == 1


def test_missing_config_is_a_runtime_error(tmp_path, capsys):
    missing = str(tmp_path / "absent.yaml")
    assert main(["train", "--config", missing, "--data", str(tmp_path), "--out", str(tmp_path / "run")]) == 2
    assert missing in capsys.readouterr().err


def test_missing_data_directory_is_a_usage_error(tmp_path, no_data_root):
    config = _write_config(tmp_path / "run.yaml", TINY_RUN)
    assert main(["train", "--config", config, "--out", str(tmp_path / "run")]) == 1


def test_data_root_comes_from_the_environment(monkeypatch, tmp_path, no_data_root):
    monkeypatch.setenv("DOMAIN_GAME_DATA_ROOT", str(tmp_path / "bench"))
    DomainGameSettings.get_instance.cache_clear()
    config = _write_config(tmp_path / "run.yaml", TINY_RUN)
    assert main(["generate-data", "--config", config]) == 0
    assert load_manifest(str(tmp_path / "bench")).num_classes == 2


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    assert "6 passed, 0 failed" in capsys.readouterr().out


def test_config_rejects_unknown_keys(tmp_path):
    path = _write_config(tmp_path / "bad.yaml", {"training": {"learning_rate": 1e-3, "momentum": 0.9}})
    with pytest.raises(pydantic.ValidationError):
        RunConfigFile.from_yaml(path)
    assert main(["generate-data", "--config", path, "--out", str(tmp_path / "bench")]) == 2


@pytest.mark.parametrize(
    "document",
    [
        {"data": {"image_size": 20}, "model": {"image_size": 20, "depth": 3}},
        {"model": {"image_size": 32}},
        {"data": {"num_classes": 3}},
        {"model": {"delta_dim": 512, "x_channels": 64}},
    ],
)
def test_config_sections_must_agree(tmp_path, document):
    with pytest.raises(pydantic.ValidationError):
        RunConfigFile.from_yaml(_write_config(tmp_path / "run.yaml", document))


def test_empty_config_snapshot_holds_every_default(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    snapshot = RunConfigFile.from_yaml(str(path)).snapshot()
    assert set(snapshot) == {"data", "model", "training", "evaluation"}
    assert snapshot["training"]["lambda_lasso"] == 5.0
    assert snapshot["training"]["omega"] == 0.05
    assert snapshot["training"]["n_transforms"] == 4
    assert snapshot["training"]["torch_num_threads"] == 1
    assert snapshot["training"]["deterministic_algorithms"] is True


@pytest.fixture
def restore_torch_switches():
    threads, deterministic = torch.get_num_threads(), torch.are_deterministic_algorithms_enabled()
    yield
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)


def test_run_snapshot_records_the_torch_switches(tmp_path, tiny_data_dir, restore_torch_switches):
    training = {**TINY_RUN["training"], "torch_num_threads": 2, "deterministic_algorithms": False}
    document = {**TINY_RUN, "training": training}
    config = _write_config(tmp_path / "run.yaml", document)
    run_dir = tmp_path / "run"
    assert main(["train", "--config", config, "--data", tiny_data_dir, "--out", str(run_dir)]) == 0
    snapshot = yaml.safe_load((run_dir / "config.snapshot").read_text())
    assert snapshot["training"]["torch_num_threads"] == 2
    assert snapshot["training"]["deterministic_algorithms"] is False
    assert torch.get_num_threads() == 2


def test_shipped_configs_are_valid():
    root = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
    for name in ("desk.yaml", "pediatric.yaml"):
        RunConfigFile.from_yaml(os.path.join(root, name))


def _oracle_report_files(tmp_path, data_dir):
    manifest = load_manifest(data_dir)
    report = MetricsReport(
        domains=[
            DomainMetrics(domain_id="source", n_samples=2, dice_mean=91.5, dice_std=1.2, jaccard_mean=84.0, jaccard_std=2.0, is_source=True),
            DomainMetrics(domain_id="lowfield", n_samples=3, dice_mean=70.0, dice_std=6.1, jaccard_mean=55.0, jaccard_std=7.0),
            DomainMetrics(domain_id="bright", n_samples=3, dice_mean=80.0, dice_std=3.3, jaccard_mean=67.0, jaccard_std=4.0),
        ]
    )
    report_path = report.to_csv(str(tmp_path / "report.csv"))
    examples_path = save_examples(str(tmp_path / "examples.npz"), collect_examples(oracle_predictor, manifest, data_dir))
    return report_path, examples_path


def test_report_plots_are_byte_identical_across_runs(tmp_path, tiny_data_dir):
    report_path, examples_path = _oracle_report_files(tmp_path, tiny_data_dir)
    contents = []
    for attempt in ("a", "b"):
        out_dir = tmp_path / attempt
        assert main(["report-plots", "--report", report_path, "--examples", examples_path, "--out", str(out_dir)]) == 0
        names = sorted(os.listdir(out_dir))
        assert names == ["dice_by_domain.svg", "triptych_bright.svg", "triptych_lowfield.svg", "triptych_source.svg"]
        contents.append({name: (out_dir / name).read_bytes() for name in names})
    assert contents[0] == contents[1]


def test_report_plots_for_a_source_only_report(tmp_path):
    report = MetricsReport(
        domains=[DomainMetrics(domain_id="source", n_samples=2, dice_mean=88.0, dice_std=1.0, jaccard_mean=79.0, jaccard_std=1.5, is_source=True)]
    )
    path = report.to_csv(str(tmp_path / "report.csv"))
    assert main(["report-plots", "--report", path]) == 0
    assert sorted(os.listdir(tmp_path)) == ["plots", "report.csv"]
    assert os.listdir(tmp_path / "plots") == ["dice_by_domain.svg"]


def test_generate_train_evaluate_is_reproducible(tmp_path):
    config = _write_config(tmp_path / "run.yaml", TINY_RUN)
    data_dir = str(tmp_path / "bench")
    assert main(["generate-data", "--config", config, "--out", data_dir]) == 0
    reports = []
    for attempt in ("a", "b"):
        run_dir = str(tmp_path / f"run_{attempt}")
        assert main(["train", "--config", config, "--data", data_dir, "--out", run_dir]) == 0
        report_path = str(tmp_path / f"report_{attempt}.csv")
        ckpt = os.path.join(run_dir, "ckpt", "best.pt")
        examples = str(tmp_path / f"examples_{attempt}.npz")
        assert main(["evaluate", "--ckpt", ckpt, "--data", data_dir, "--out", report_path, "--examples", examples]) == 0
        with open(report_path) as handle:
            reports.append(handle.read())
        assert os.path.exists(report_path.replace(".csv", ".txt"))
    assert reports[0] == reports[1]
    assert reports[0].splitlines()[0] == "domain_id,n_samples,dice_mean,dice_std,jaccard_mean,jaccard_std,is_source"


def test_evaluation_section_names_the_outputs(tmp_path, tiny_data_dir):
    document = {**TINY_RUN, "evaluation": {"report_name": "cross_domain", "examples_name": "panels.npz", "plots_dir": "figures"}}
    config = _write_config(tmp_path / "run.yaml", document)
    run_dir = tmp_path / "run"
    assert main(["train", "--config", config, "--data", tiny_data_dir, "--out", str(run_dir)]) == 0
    ckpt = str(run_dir / "ckpt" / "best.pt")
    assert main(["evaluate", "--ckpt", ckpt, "--config", config, "--data", tiny_data_dir]) == 0
    for name in ("cross_domain.csv", "cross_domain.txt", "cross_domain.json", "panels.npz"):
        assert (run_dir / name).is_file(), name
    assert not (run_dir / "report.csv").exists()
    assert main(["report-plots", "--report", str(run_dir / "cross_domain.csv"), "--config", config]) == 0
    assert "triptych_source.svg" in os.listdir(run_dir / "figures")


def test_batch_size_flag_overrides_the_evaluation_section(tmp_path, tiny_data_dir, monkeypatch):
    import domain_game.evaluation.metrics as metrics

    document = {**TINY_RUN, "evaluation": {"batch_size": 3}}
    config = _write_config(tmp_path / "run.yaml", document)
    run_dir = tmp_path / "run"
    assert main(["train", "--config", config, "--data", tiny_data_dir, "--out", str(run_dir)]) == 0
    seen = []
    original = metrics.as_predictor

    def recording(source, batch_size=32, **kwargs):
        seen.append(batch_size)
        return original(source, batch_size=batch_size, **kwargs)

    monkeypatch.setattr(metrics, "as_predictor", recording)
    ckpt = str(run_dir / "ckpt" / "best.pt")
    assert main(["evaluate", "--ckpt", ckpt, "--config", config, "--data", tiny_data_dir]) == 0
    assert main(["evaluate", "--ckpt", ckpt, "--config", config, "--data", tiny_data_dir, "--batch-size", "5"]) == 0
    assert seen == [3, 5]
