"""Gridded score/label data, sparse fire sets, scopes and temporal splits.

Every array is stored time-major as ``(n_times, n_rows, n_cols)`` and is
made read-only at construction, so the objects here can be shared freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import DataError, GridMismatch, NaNInScores

_UINT64_MAX = 2**64 - 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridSpec:
    n_times: int
    n_rows: int
    n_cols: int
    cell_size_km: float = 5.0

    def __post_init__(self):
        for name in ("n_times", "n_rows", "n_cols"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DataError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.cell_size_km > 0:
            raise DataError("cell_size_km must be positive")
        if self.n_times * self.n_rows * self.n_cols > _UINT64_MAX:
            raise DataError("grid cell count overflows a 64-bit count")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_times, self.n_rows, self.n_cols)

    @property
    def n_cells(self) -> int:
        return self.n_times * self.n_rows * self.n_cols

    @property
    def n_spatial(self) -> int:
        return self.n_rows * self.n_cols

    def with_times(self, n_times: int) -> "GridSpec":
        return GridSpec(n_times, self.n_rows, self.n_cols, self.cell_size_km)

    def same_space(self, other: "GridSpec") -> bool:
        return (self.n_rows, self.n_cols) == (other.n_rows, other.n_cols)


def _reshape(spec: GridSpec, values, dtype) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size != spec.n_cells:
        raise GridMismatch(
            f"array has {arr.size} values, grid {spec.shape} needs {spec.n_cells}")
    return np.ascontiguousarray(arr.reshape(spec.shape), dtype=dtype)


@dataclass(frozen=True, eq=False)
class ScoreField:
    """Model scores ``s[t, row, col]`` in 32-bit precision."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        arr = _reshape(self.spec, self.values, np.float32)
        if not np.isfinite(arr).all():
            raise NaNInScores("score fields must be finite (NaN/Inf rejected)")
        object.__setattr__(self, "values", _frozen(arr))

    @classmethod
    def from_array(cls, values, cell_size_km: float = 5.0) -> "ScoreField":
        arr = np.asarray(values)
        if arr.ndim != 3:
            raise DataError("expected a (times, rows, cols) array")
        return cls(GridSpec(*arr.shape, cell_size_km=cell_size_km), arr)

    def slice_times(self, times: range) -> "ScoreField":
        return ScoreField(self.spec.with_times(len(times)),
                          self.values[times.start:times.stop])


@dataclass(frozen=True, eq=False)
class LabelField:
    """Binary occupancy labels ``y[t, row, col]``."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.values)
        if raw.dtype != bool and raw.size and not np.isin(raw, (0, 1)).all():
            raise DataError("labels must be 0/1")
        object.__setattr__(self, "values", _frozen(_reshape(self.spec, raw, bool)))

    @classmethod
    def from_array(cls, values, cell_size_km: float = 5.0) -> "LabelField":
        arr = np.asarray(values)
        if arr.ndim != 3:
            raise DataError("expected a (times, rows, cols) array")
        return cls(GridSpec(*arr.shape, cell_size_km=cell_size_km), arr)

    def slice_times(self, times: range) -> "LabelField":
        return LabelField(self.spec.with_times(len(times)),
                          self.values[times.start:times.stop])


@dataclass(frozen=True, eq=False)
class OutputRecord:
    """A score field paired with the label field it is verified against."""

    scores: ScoreField
    labels: LabelField

    def __post_init__(self):
        if self.scores.spec != self.labels.spec:
            raise GridMismatch(
                f"scores grid {self.scores.spec.shape} != labels grid {self.labels.spec.shape}")

    @property
    def spec(self) -> GridSpec:
        return self.scores.spec

    @classmethod
    def from_arrays(cls, scores, labels) -> "OutputRecord":
        return cls(ScoreField.from_array(scores), LabelField.from_array(labels))

    def slice_times(self, times: range) -> "OutputRecord":
        return OutputRecord(self.scores.slice_times(times), self.labels.slice_times(times))


@dataclass(frozen=True, eq=False)
class FireSet:
    """Sparse set of ``(t, row, col)`` triples, sorted and duplicate-free."""

    spec: GridSpec
    members: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.members, dtype=np.int64).reshape(-1, 3)
        if len(m):
            hi = np.array(self.spec.shape)
            if (m < 0).any() or (m >= hi).any():
                raise DataError("fire set member outside grid bounds")
            order = np.lexsort((m[:, 2], m[:, 1], m[:, 0]))
            m = m[order]
            keep = np.ones(len(m), dtype=bool)
            keep[1:] = (np.diff(m, axis=0) != 0).any(axis=1)
            m = m[keep]
        object.__setattr__(self, "members", _frozen(np.ascontiguousarray(m)))

    @classmethod
    def from_mask(cls, spec: GridSpec, mask: np.ndarray) -> "FireSet":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != spec.shape:
            raise GridMismatch(f"mask shape {mask.shape} != grid {spec.shape}")
        # argwhere walks C order, which is already lexicographic
        return cls(spec, np.argwhere(mask))

    @classmethod
    def empty(cls, spec: GridSpec) -> "FireSet":
        return cls(spec, np.zeros((0, 3), dtype=np.int64))

    def to_mask(self) -> np.ndarray:
        mask = np.zeros(self.spec.shape, dtype=bool)
        if len(self.members):
            t, r, c = self.members.T
            mask[t, r, c] = True
        return mask

    def to_labels(self) -> LabelField:
        return LabelField(self.spec, self.to_mask())

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[tuple[int, int, int]]:
        for t, r, c in self.members.tolist():
            yield (t, r, c)

    def __contains__(self, item) -> bool:
        t, r, c = item
        if not (0 <= t < self.spec.n_times and 0 <= r < self.spec.n_rows
                and 0 <= c < self.spec.n_cols):
            return False
        return bool(((self.members == (t, r, c)).all(axis=1)).any())

    def issubset(self, other: "FireSet") -> bool:
        _check_same(self.spec, other.spec)
        return bool((self.to_mask() <= other.to_mask()).all())

    def __eq__(self, other) -> bool:
        if not isinstance(other, FireSet):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.members, other.members)

    __hash__ = None


SCOPE_KINDS = ("global", "fire_prone", "spread_region")


@dataclass(frozen=True, eq=False)
class ScopeMask:
    """Time-invariant spatial evaluation mask.

    ``cells`` is a ``(n_rows, n_cols)`` boolean array that is replicated
    across every time step of the grid it is applied to.
    """

    spec: GridSpec
    kind: str
    cells: np.ndarray = field(repr=False)
    fraction: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SCOPE_KINDS:
            raise DataError(f"unknown scope kind {self.kind!r}")
        cells = np.asarray(self.cells, dtype=bool)
        if cells.shape != (self.spec.n_rows, self.spec.n_cols):
            raise GridMismatch(f"scope cells shape {cells.shape} does not match grid")
        if self.kind == "global" and not cells.all():
            raise DataError("global scopes must cover every spatial cell")
        if self.kind == "fire_prone":
            expected = math.ceil(round(self.fraction * self.spec.n_spatial, 9))
            if int(cells.sum()) != expected:
                raise DataError(f"fire-prone mask must hold {expected} cells")
        object.__setattr__(self, "cells", _frozen(np.ascontiguousarray(cells)))

    @property
    def spatial_count(self) -> int:
        return int(self.cells.sum())

    @property
    def cell_count(self) -> int:
        return self.spatial_count * self.spec.n_times

    def volume(self) -> np.ndarray:
        """The mask broadcast over time, shape ``(n_times, n_rows, n_cols)``."""
        return np.broadcast_to(self.cells, self.spec.shape)

    def retarget(self, spec: GridSpec) -> "ScopeMask":
        """Reuse this spatial mask on a grid with a different time extent."""
        if not self.spec.same_space(spec):
            raise GridMismatch("scope spatial shape differs from the target grid")
        return ScopeMask(spec, self.kind, self.cells, self.fraction)

    @property
    def label(self) -> str:
        if self.kind == "fire_prone":
            return f"top{round(self.fraction * 100):g}"
        return self.kind

    def issubset(self, other: "ScopeMask") -> bool:
        return bool((self.cells <= other.cells).all())


def global_scope(spec: GridSpec) -> ScopeMask:
    return ScopeMask(spec, "global", np.ones((spec.n_rows, spec.n_cols), dtype=bool))


@dataclass(frozen=True)
class TimeSplit:
    """Disjoint, ordered train/validation/test time-index ranges."""

    train: range
    validation: range
    test: range

    def __post_init__(self):
        parts = (self.train, self.validation, self.test)
        for r in parts:
            if r.step != 1:
                raise DataError("split ranges must be contiguous")
        for a, b in zip(parts, parts[1:]):
            if len(a) and len(b) and a.stop > b.start:
                raise DataError("split ranges must be disjoint and ordered train < validation < test")

    @classmethod
    def by_fraction(cls, n_times: int, train: float = 0.6, validation: float = 0.2) -> "TimeSplit":
        n_train = int(round(n_times * train))
        n_val = int(round(n_times * validation))
        return cls(range(0, n_train), range(n_train, n_train + n_val),
                   range(n_train + n_val, n_times))

    @classmethod
    def parse(cls, text: str) -> "TimeSplit":
        """Parse ``"a:b,b:c,c:d"`` into train/validation/test ranges."""
        try:
            parts = [tuple(int(x) for x in p.split(":")) for p in text.split(",")]
            train, val, test = (range(a, b) for a, b in parts)
        except ValueError as exc:
            raise DataError(f"bad split {text!r}; expected 'a:b,b:c,c:d'") from exc
        return cls(train, val, test)

    def __str__(self) -> str:
        return ",".join(f"{r.start}:{r.stop}" for r in (self.train, self.validation, self.test))


def _check_same(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise GridMismatch(f"grid {a.shape} does not match grid {b.shape}")


def _check_scope(scope: ScopeMask, spec: GridSpec) -> None:
    if not scope.spec.same_space(spec):
        raise GridMismatch(
            f"scope grid {scope.spec.shape[1:]} does not match data grid {spec.shape[1:]}")


def _float32_ceil(tau: float) -> np.float32:
    # smallest float32 >= tau, so the comparison is exact without upcasting
    t32 = np.float32(tau)
    if float(t32) < tau:
        t32 = np.nextafter(t32, np.float32(np.inf))
    return t32


def predicted_mask(record: OutputRecord, tau: float, scope: ScopeMask) -> np.ndarray:
    if not math.isfinite(tau):
        raise DataError("threshold must be finite")
    _check_scope(scope, record.spec)
    return (record.scores.values >= _float32_ceil(tau)) & scope.cells


def observed_mask(labels: LabelField, scope: ScopeMask) -> np.ndarray:
    _check_scope(scope, labels.spec)
    return labels.values & scope.cells


def threshold_scores(record: OutputRecord, tau: float, scope: ScopeMask) -> FireSet:
    """Predicted fire set: in-scope cells whose score is at least ``tau``."""
    return FireSet.from_mask(record.spec, predicted_mask(record, tau, scope))


def observed_set(labels: LabelField, scope: ScopeMask) -> FireSet:
    """In-scope cells with a positive label."""
    return FireSet.from_mask(labels.spec, observed_mask(labels, scope))
