"""In-process checks of the transform group laws and of every metric against brute-force loops."""

from __future__ import annotations

import itertools
import logging
import math
from typing import Callable, List, Tuple

import numpy as np
import torch

from domain_game.common.geometry import compose, enumerate_group, invert, apply_transform
from domain_game.common.objectives import dice_score, jaccard_score, lasso_penalty, psnr, pull_loss_delta, pull_loss_x
from domain_game.training.game import TrainConfig, lr_at
from domain_game.utils.logging_config import setup_logging

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)

ORACLE_TRIALS = 100
TOLERANCE = 1e-6
GRID = np.arange(9).reshape(3, 3)


def check_group_closure() -> None:
    actions = [apply_transform(t, GRID).tolist() for t in enumerate_group()]
    assert len({str(a) for a in actions}) == 8, "group elements do not act distinctly"
    for a, b in itertools.product(enumerate_group(), repeat=2):
        expected = apply_transform(a, apply_transform(b, GRID))
        assert np.array_equal(apply_transform(compose(a, b), GRID), expected), f"compose({a}, {b})"


def check_group_identity_and_inverse() -> None:
    identity = enumerate_group()[0]
    for t in enumerate_group():
        assert compose(t, identity) == t and compose(identity, t) == t, f"identity law fails for {t}"
        assert np.array_equal(apply_transform(invert(t), apply_transform(t, GRID)), GRID), f"inverse of {t}"


def _loop_overlap(pred: np.ndarray, true: np.ndarray, class_id: int) -> Tuple[float, float]:
    both = either = size = 0
    for p, y in zip(pred.ravel(), true.ravel()):
        a, b = p == class_id, y == class_id
        both += a and b
        either += a or b
        size += int(a) + int(b)
    dice = 1.0 if size == 0 else 2.0 * both / size
    jaccard = 1.0 if either == 0 else both / either
    return dice, jaccard


def check_overlap_metrics() -> None:
    rng = np.random.default_rng(0)
    for _ in range(ORACLE_TRIALS):
        shape = tuple(rng.integers(1, 6, size=2))
        pred, true = rng.integers(0, 3, size=shape), rng.integers(0, 3, size=shape)
        for class_id in (1, 2):
            dice, jaccard = _loop_overlap(pred, true, class_id)
            assert abs(dice_score(pred, true, class_id) - dice) < TOLERANCE
            assert abs(jaccard_score(pred, true, class_id) - jaccard) < TOLERANCE


def check_psnr() -> None:
    rng = np.random.default_rng(1)
    for _ in range(ORACLE_TRIALS):
        ref, est = rng.random((3, 4)), rng.random((3, 4))
        mse = sum((a - b) ** 2 for a, b in zip(ref.ravel(), est.ravel())) / ref.size
        expected = min(100.0, 10 * math.log10(1.0 / max(mse, 1e-10)))
        value = float(psnr(torch.from_numpy(ref), torch.from_numpy(est)))
        assert abs(value - expected) < TOLERANCE, f"psnr {value} vs {expected}"


def check_pull_and_lasso() -> None:
    rng = np.random.default_rng(2)
    group = enumerate_group()
    for _ in range(ORACLE_TRIALS):
        n = int(rng.integers(1, 4))
        x_ref = rng.standard_normal((2, 3, 3))
        transforms = [group[int(i)] for i in rng.integers(0, 8, size=n)]
        x_set = [rng.standard_normal((2, 3, 3)) for _ in range(n)]
        expected = 0.0
        for t, x in zip(transforms, x_set):
            aligned = apply_transform(t, x_ref)
            expected += sum((a - b) ** 2 for a, b in zip(aligned.ravel(), x.ravel())) / x.size / n
        value = float(pull_loss_x(torch.from_numpy(x_ref), [torch.from_numpy(x) for x in x_set], transforms))
        assert abs(value - expected) < TOLERANCE, "pull_loss_x"

        deltas = [rng.standard_normal(4) for _ in range(n)]
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        expected = sum(sum((deltas[j] - deltas[i]) ** 2) / 4 for i, j in pairs) / max(1, len(pairs))
        assert abs(float(pull_loss_delta([torch.from_numpy(d) for d in deltas])) - expected) < TOLERANCE, "pull_loss_delta"

        expected = sum(abs(v) for v in x_ref.ravel()) / x_ref.size + sum(abs(v) for v in deltas[0]) / 4
        value = float(lasso_penalty(torch.from_numpy(x_ref), torch.from_numpy(deltas[0])))
        assert abs(value - expected) < TOLERANCE, "lasso_penalty"


def check_schedule() -> None:
    config = TrainConfig()
    for epoch, expected in ((0, 1e-4), (15, 5e-5), (30, 1e-4)):
        assert abs(lr_at(epoch, config) - expected) < 1e-12, f"lr_at({epoch})"


CHECKS: List[Tuple[str, Callable[[], None]]] = [
    ("group closure", check_group_closure),
    ("group identity and inverse", check_group_identity_and_inverse),
    ("dice and jaccard", check_overlap_metrics),
    ("psnr", check_psnr),
    ("pull and lasso losses", check_pull_and_lasso),
    ("learning-rate schedule", check_schedule),
]


def run_selftest(echo: Callable[[str], None] = print) -> Tuple[int, int]:
    """Run every check; returns ``(passed, failed)``."""
    passed = failed = 0
    for name, check in CHECKS:
        try:
            check()
        except AssertionError as e:
            failed += 1
            echo(f"FAIL {name}: {e}")
        else:
            passed += 1
            echo(f"ok   {name}")
    echo(f"{passed} passed, {failed} failed")
    return passed, failed
