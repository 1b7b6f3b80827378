"""Factor-group combinatorics.

Group indices ``(j_1, ..., j_N)`` address the sample sets, basis indices
``(i_1, ..., i_N)`` address the basis measures. Both are 1-based in the
public API; flat offsets are 0-based and row-major (last index fastest).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, IndexRangeError


@dataclass(frozen=True)
class FactorConfig:
    """Number of factors ``J_n`` and bases ``I_n`` for each factor group."""

    factors_per_group: tuple[int, ...]
    bases_per_group: tuple[int, ...]

    def __init__(self, factors_per_group: Sequence[int], bases_per_group: Sequence[int] | None = None):
        J = tuple(int(j) for j in factors_per_group)
        I = tuple(int(i) for i in bases_per_group) if bases_per_group is not None else (2,) * len(J)
        if len(J) < 1:
            raise ConfigError("need at least one factor group")
        if len(I) != len(J):
            raise ConfigError(f"bases_per_group has {len(I)} entries, expected {len(J)}")
        if any(j < 1 for j in J):
            raise ConfigError(f"factors_per_group must be >= 1, got {list(J)}")
        if any(i < 1 for i in I):
            raise ConfigError(f"bases_per_group must be >= 1, got {list(I)}")
        object.__setattr__(self, "factors_per_group", J)
        object.__setattr__(self, "bases_per_group", I)

    @property
    def n_groups(self) -> int:
        return len(self.factors_per_group)

    @property
    def n_sets(self) -> int:
        """S, the number of factor combinations."""
        return math.prod(self.factors_per_group)

    @property
    def n_bases(self) -> int:
        """I, the number of basis measures."""
        return math.prod(self.bases_per_group)

    def with_bases(self, bases_per_group: Sequence[int]) -> "FactorConfig":
        return FactorConfig(self.factors_per_group, bases_per_group)

    def degenerate(self) -> "FactorConfig":
        """Same factor layout with a single basis (plain DP)."""
        return self.with_bases((1,) * self.n_groups)


def _check(indices: tuple[int, ...], dims: tuple[int, ...], what: str) -> None:
    if len(indices) != len(dims):
        raise IndexRangeError(f"{what} has length {len(indices)}, expected {len(dims)}")
    for pos, (i, d) in enumerate(zip(indices, dims)):
        if not 1 <= i <= d:
            raise IndexRangeError(f"{what} entry {pos} is {i}, outside 1..{d}")


@dataclass(frozen=True, order=True)
class GroupIndex:
    indices: tuple[int, ...]

    def __init__(self, *indices):
        if len(indices) == 1 and not isinstance(indices[0], (int, np.integer)):
            indices = indices[0]
        object.__setattr__(self, "indices", tuple(int(i) for i in indices))

    def validate(self, cfg: FactorConfig) -> "GroupIndex":
        _check(self.indices, cfg.factors_per_group, "group index")
        return self

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True, order=True)
class BasisIndex:
    indices: tuple[int, ...]

    def __init__(self, *indices):
        if len(indices) == 1 and not isinstance(indices[0], (int, np.integer)):
            indices = indices[0]
        object.__setattr__(self, "indices", tuple(int(i) for i in indices))

    def validate(self, cfg: FactorConfig) -> "BasisIndex":
        _check(self.indices, cfg.bases_per_group, "basis index")
        return self

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)


def ravel(indices: Sequence[int], dims: Sequence[int]) -> int:
    """1-based multi-index to 0-based row-major offset."""
    indices, dims = tuple(int(i) for i in indices), tuple(int(d) for d in dims)
    _check(indices, dims, "index")
    return int(np.ravel_multi_index(tuple(i - 1 for i in indices), dims))


def unravel(offset: int, dims: Sequence[int]) -> tuple[int, ...]:
    """0-based row-major offset to 1-based multi-index."""
    dims = tuple(int(d) for d in dims)
    total = math.prod(dims)
    if not 0 <= offset < total:
        raise IndexRangeError(f"offset {offset} outside [0, {total})")
    return tuple(int(i) + 1 for i in np.unravel_index(int(offset), dims))


def flat_index(idx: GroupIndex | BasisIndex, cfg: FactorConfig) -> int:
    if isinstance(idx, GroupIndex):
        return ravel(idx.indices, cfg.factors_per_group)
    if isinstance(idx, BasisIndex):
        return ravel(idx.indices, cfg.bases_per_group)
    raise TypeError(f"expected GroupIndex or BasisIndex, got {type(idx).__name__}")


def group_at(offset: int, cfg: FactorConfig) -> GroupIndex:
    return GroupIndex(unravel(offset, cfg.factors_per_group))


def basis_at(offset: int, cfg: FactorConfig) -> BasisIndex:
    return BasisIndex(unravel(offset, cfg.bases_per_group))


def enumerate_groups(cfg: FactorConfig) -> list[GroupIndex]:
    """All S group indices in row-major order."""
    return [GroupIndex(t) for t in itertools.product(*(range(1, j + 1) for j in cfg.factors_per_group))]


def enumerate_bases(cfg: FactorConfig) -> list[BasisIndex]:
    return [BasisIndex(t) for t in itertools.product(*(range(1, i + 1) for i in cfg.bases_per_group))]
