"""Exact geometric transforms of the square: quarter turns and axis flips.

Every transform is an element of the dihedral group of order 8. A
:class:`TransformSpec` is canonical when ``flip_vertical`` is false; the pixel
action of ``(rotation, flip_horizontal, flip_vertical)`` is

    rot90^rotation . flip_vertical . flip_horizontal

with ``rot90`` counterclockwise, ``result[i][j] = input[j][W - 1 - i]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, TypeVar, Union

import numpy as np
import torch

from domain_game.common.exceptions import InvalidArgumentError, ShapeMismatchError

ArrayLike = TypeVar("ArrayLike", np.ndarray, torch.Tensor)


@dataclass(frozen=True)
class TransformSpec:
    """One element of the transform group."""

    rotation_quarter_turns: int = 0
    flip_horizontal: bool = False
    flip_vertical: bool = False

    def __post_init__(self):
        if self.rotation_quarter_turns not in (0, 1, 2, 3):
            raise InvalidArgumentError(
                title="Invalid rotation",
                detail=f"rotation_quarter_turns must be in {{0,1,2,3}}, got {self.rotation_quarter_turns}",
            )

    @classmethod
    def identity(cls) -> "TransformSpec":
        return cls()

    @property
    def is_identity(self) -> bool:
        return canonicalize(self) == TransformSpec()

    def to_dict(self) -> Dict[str, Union[int, bool]]:
        return {
            "rotation_quarter_turns": self.rotation_quarter_turns,
            "flip_horizontal": self.flip_horizontal,
            "flip_vertical": self.flip_vertical,
        }

    @classmethod
    def from_dict(cls, record: Dict[str, Union[int, bool]]) -> "TransformSpec":
        return cls(
            rotation_quarter_turns=int(record["rotation_quarter_turns"]),
            flip_horizontal=bool(record["flip_horizontal"]),
            flip_vertical=bool(record["flip_vertical"]),
        )


def canonicalize(t: TransformSpec) -> TransformSpec:
    """Map a transform onto its canonical form (no vertical flip).

    A vertical flip equals a horizontal flip followed by a half turn, and the
    half turn commutes with every element.
    """
    mirrored = t.flip_horizontal != t.flip_vertical
    turns = (t.rotation_quarter_turns + (2 if t.flip_vertical else 0)) % 4
    return TransformSpec(rotation_quarter_turns=turns, flip_horizontal=mirrored, flip_vertical=False)


def enumerate_group() -> List[TransformSpec]:
    """All 8 canonical elements, rotations first."""
    return [TransformSpec(k, mirrored, False) for mirrored in (False, True) for k in range(4)]


def compose(t1: TransformSpec, t2: TransformSpec) -> TransformSpec:
    """Canonical element acting as ``t1`` applied after ``t2``."""
    a, b = canonicalize(t1), canonicalize(t2)
    # a reflection conjugates a rotation into its inverse
    sign = -1 if a.flip_horizontal else 1
    turns = (a.rotation_quarter_turns + sign * b.rotation_quarter_turns) % 4
    return TransformSpec(turns, a.flip_horizontal != b.flip_horizontal, False)


def invert(t: TransformSpec) -> TransformSpec:
    c = canonicalize(t)
    if c.flip_horizontal:
        # reflections are involutions
        return c
    return TransformSpec((-c.rotation_quarter_turns) % 4, False, False)


def apply_transform(t: TransformSpec, a: ArrayLike) -> ArrayLike:
    """Permute the last two dimensions of ``a`` according to ``t``.

    Works on both numpy arrays and torch tensors; values are never resampled.

    Raises:
        ShapeMismatchError: if ``a`` has fewer than two dimensions, or the last
            two are not equal and the rotation is odd.
    """
    if a.ndim < 2:
        raise ShapeMismatchError(
            title="Transform needs a 2-D grid",
            detail=f"expected at least 2 dimensions, got shape {tuple(a.shape)}",
        )
    c = canonicalize(t)
    height, width = a.shape[-2], a.shape[-1]
    if c.rotation_quarter_turns % 2 == 1 and height != width:
        raise ShapeMismatchError(
            title="Odd rotation of a non-square grid",
            detail=f"expected square trailing dimensions, got ({height}, {width})",
        )
    row_axis, col_axis = a.ndim - 2, a.ndim - 1
    if isinstance(a, torch.Tensor):
        out = torch.flip(a, dims=(col_axis,)) if c.flip_horizontal else a
        if c.rotation_quarter_turns:
            out = torch.rot90(out, c.rotation_quarter_turns, dims=(row_axis, col_axis))
        return out.contiguous() if out is not a else a.clone()
    out = np.flip(a, axis=col_axis) if c.flip_horizontal else a
    if c.rotation_quarter_turns:
        out = np.rot90(out, c.rotation_quarter_turns, axes=(row_axis, col_axis))
    return np.ascontiguousarray(out) if out is not a else a.copy()


def subgroup(enable_rotation: bool, enable_flip: bool) -> List[TransformSpec]:
    """Canonical elements of the subgroup generated by the enabled generators."""
    if enable_rotation and enable_flip:
        return enumerate_group()
    if enable_rotation:
        return [TransformSpec(k, False, False) for k in range(4)]
    if enable_flip:
        return [
            canonicalize(TransformSpec(0, h, v)) for h, v in ((False, False), (True, False), (False, True), (True, True))
        ]
    return [TransformSpec()]


def sample_transform_set(
    n: int,
    rng: np.random.Generator,
    enable_rotation: bool = True,
    enable_flip: bool = True,
) -> List[TransformSpec]:
    """Draw ``n`` independent transforms uniformly from the enabled subgroup.

    Args:
        n: number of transforms, at least 1.
        rng: seeded generator; the draw is deterministic given its state.
        enable_rotation: include quarter turns.
        enable_flip: include axis flips.

    Raises:
        InvalidArgumentError: when ``n < 1``.
    """
    if n < 1:
        raise InvalidArgumentError(title="Invalid transform count", detail=f"n must be >= 1, got {n}")
    elements = subgroup(enable_rotation, enable_flip)
    indices = rng.integers(0, len(elements), size=n)
    return [elements[int(i)] for i in indices]
