import pandas as pd
import pytest

from domain_game.common.exceptions import DuplicateRegistration, InvalidArgumentError
from domain_game.evaluation.ablations import (
    AblationRegistry,
    AblationTypes,
    apply_ablation,
    single_encoder_config,
    summarize_ablations,
)
from domain_game.training.game import TrainConfig


def test_registered_ablations_in_order():
    assert AblationRegistry.list_names() == ["domain-encoder", "space-constraint", "rotation", "flip"]
    assert AblationRegistry.get("flip").label == "w/o flip"


def test_registering_twice_fails():
    with pytest.raises(DuplicateRegistration):
        AblationRegistry.register(AblationTypes.ROTATION.value, "again")(lambda config: config)
    assert AblationRegistry.get("rotation").label == "w/o rotation"


@pytest.mark.parametrize(
    "name,field,value",
    [
        ("domain-encoder", "disable_domain_encoder", True),
        ("space-constraint", "disable_space_constraint", True),
        ("rotation", "enable_rotation", False),
        ("flip", "enable_flip", False),
    ],
)
def test_each_ablation_changes_one_switch(name, field, value):
    config = TrainConfig()
    ablated = apply_ablation(config, name)
    assert getattr(ablated, field) == value
    changed = {k for k, v in ablated.model_dump().items() if v != config.model_dump()[k]}
    assert changed == {field}


def test_no_ablation_keeps_the_config():
    config = TrainConfig(seed=9)
    assert apply_ablation(config, None) is config


def test_unknown_ablation_fails():
    with pytest.raises(InvalidArgumentError) as info:
        apply_ablation(TrainConfig(), "mixup")
    assert "mixup" in info.value.detail


def test_single_encoder_baseline_sees_only_identity_views():
    config = single_encoder_config(TrainConfig(epochs=7))
    assert config.disable_domain_encoder and config.disable_space_constraint
    assert not config.enable_rotation and not config.enable_flip
    assert config.n_transforms == 1
    assert config.epochs == 7


def test_summary_takes_medians_and_drops_against_the_benchmark():
    rows = []
    for variant, label, dice in [
        ("benchmark", "Benchmark", [70.0, 74.0, 72.0]),
        ("domain-encoder", "w/o domain encoder", [60.0, 66.0, 62.0]),
        ("space-constraint", "w/o space constraint", [68.0, 69.0, 71.0]),
        ("rotation", "w/o rotation", [65.0, 64.0, 63.0]),
        ("flip", "w/o flip", [70.0, 70.0, 70.0]),
    ]:
        for seed, value in enumerate(dice):
            rows.append({"variant": variant, "label": label, "seed": seed, "target_dice": value, "target_jaccard": value - 10})
    table = summarize_ablations(pd.DataFrame(rows))
    assert list(table["variant"]) == ["benchmark", "domain-encoder", "space-constraint", "rotation", "flip"]
    assert list(table["target_dice"]) == [72.0, 62.0, 69.0, 64.0, 70.0]
    assert list(table["dice_drop"]) == [0.0, 10.0, 3.0, 8.0, 2.0]
    assert list(table["jaccard_drop"]) == [0.0, 10.0, 3.0, 8.0, 2.0]
    assert table.loc[0, "label"] == "Benchmark"
