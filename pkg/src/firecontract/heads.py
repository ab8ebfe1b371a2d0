"""Lightweight heads on frozen features, their training, selection and regret.

Features are ``(n, d, rows, cols)`` arrays (a single ``(d, rows, cols)``
slice is promoted to ``n = 1``); heads emit one logit per pixel, so the
output dimension ``c`` is 1 throughout.

Parameter layouts (``c = 1``)::

    ConstantPrior   b (c,)
    LinearProbe     W (d, c), b (c,)
    PixelMLP        W1 (d, h), b1 (h,), W2 (h, c), b2 (c,)
    ShallowAdapter  K (3, 3, d, h), b1 (h,), W2 (h, c), b2 (c,)
    WideAdapter     as ShallowAdapter with H hidden units
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union as _U

import numpy as np

from .contracts import HEAD_ORDER
from .errors import ContractViolation, DataError, NoCandidates, ShapeError, SingleClassData
from .grid import LabelField, OutputRecord, ScopeMask, ScoreField
from .matching import EXACT, MatchingRule, decision_f1
from .metrics import average_precision, default_candidates, f1_curve, select_threshold
from .rng import stream

DEFAULT_SEEDS = (1, 7, 42, 99, 123)


@dataclass(frozen=True)
class HeadKind:
    name: str
    hidden: int = 0

    def __post_init__(self):
        if self.name not in HEAD_ORDER:
            raise DataError(f"unknown head kind {self.name!r}")
        needs_width = self.name in ("PixelMLP", "ShallowAdapter", "WideAdapter")
        if needs_width and self.hidden < 1:
            raise DataError(f"{self.name} needs a hidden width >= 1")

    @property
    def order(self) -> int:
        return HEAD_ORDER.index(self.name)

    def __str__(self) -> str:
        return f"{self.name}({self.hidden})" if self.hidden else self.name


@dataclass(frozen=True)
class TrainConfig:
    seeds: tuple = DEFAULT_SEEDS
    epochs: int = 200
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: Optional[int] = None  # None = full batch
    hidden_h: int = 16
    hidden_H: int = 64
    weight_scheme: str = "balanced"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise DataError("at least one seed is required")
        if self.learning_rate <= 0 or not (0 <= self.momentum < 1):
            raise DataError("learning rate must be positive and momentum in [0, 1)")
        if self.hidden_h < 1 or self.hidden_H <= self.hidden_h:
            raise DataError("need hidden_H > hidden_h >= 1")
        if self.weight_scheme not in ("balanced", "none"):
            raise DataError(f"unknown weight scheme {self.weight_scheme!r}")

    def kinds(self, allowed: Sequence[str] = HEAD_ORDER) -> list[HeadKind]:
        widths = {"PixelMLP": self.hidden_h, "ShallowAdapter": self.hidden_h,
                  "WideAdapter": self.hidden_H}
        return [HeadKind(n, widths.get(n, 0)) for n in HEAD_ORDER if n in allowed]

    def to_dict(self) -> dict:
        return {"seeds": list(self.seeds), "epochs": self.epochs,
                "learning_rate": self.learning_rate, "momentum": self.momentum,
                "batch_size": self.batch_size, "hidden_h": self.hidden_h,
                "hidden_H": self.hidden_H, "weight_scheme": self.weight_scheme,
                "optimizer": "sgd_momentum", "init": "uniform_1_over_sqrt_fan_in"}


def param_shapes(kind: HeadKind, d: int) -> dict[str, tuple]:
    h = kind.hidden
    if kind.name == "ConstantPrior":
        return {"b": (1,)}
    if kind.name == "LinearProbe":
        return {"W": (d, 1), "b": (1,)}
    if kind.name == "PixelMLP":
        return {"W1": (d, h), "b1": (h,), "W2": (h, 1), "b2": (1,)}
    return {"K": (3, 3, d, h), "b1": (h,), "W2": (h, 1), "b2": (1,)}


@dataclass(frozen=True, eq=False)
class HeadParams:
    kind: HeadKind
    n_features: int
    arrays: dict = field(repr=False)

    def __post_init__(self):
        shapes = param_shapes(self.kind, self.n_features)
        if set(shapes) != set(self.arrays):
            raise ShapeError(f"{self.kind} expects blocks {sorted(shapes)}")
        arrays = {}
        for name, shape in shapes.items():
            a = np.array(self.arrays[name], dtype=np.float64).reshape(shape)
            a.setflags(write=False)
            arrays[name] = a
        object.__setattr__(self, "arrays", arrays)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[k].ravel() for k in sorted(self.arrays)])

    def with_arrays(self, arrays: dict) -> "HeadParams":
        return HeadParams(self.kind, self.n_features, arrays)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HeadParams):
            return NotImplemented
        return (self.kind == other.kind and self.n_features == other.n_features
                and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays))

    __hash__ = None

    def to_dict(self) -> dict:
        return {"kind": self.kind.name, "hidden": self.kind.hidden,
                "n_features": self.n_features,
                "arrays": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                           for k, v in sorted(self.arrays.items())}}

    @classmethod
    def from_dict(cls, data: dict) -> "HeadParams":
        arrays = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
                  for k, v in data["arrays"].items()}
        return cls(HeadKind(data["kind"], data.get("hidden", 0)), data["n_features"], arrays)


def _as_batch(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError("features must be (d, rows, cols) or (n, d, rows, cols)")
    return x


def _patches(x: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 neighbourhoods, ``(n, d, R, C) -> (n, R, C, 9 d)``.

    The last axis is ordered (dy, dx, channel), matching ``K.reshape(9 d, h)``.
    """
    n, d, R, C = x.shape
    xp = np.pad(x.transpose(0, 2, 3, 1), ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = [xp[:, dy:dy + R, dx:dx + C, :] for dy in range(3) for dx in range(3)]
    return np.concatenate(cols, axis=-1)


def _inputs(kind: HeadKind, x: np.ndarray) -> np.ndarray:
    if kind.name in ("ShallowAdapter", "WideAdapter"):
        return _patches(x)
    return x.transpose(0, 2, 3, 1)


def _forward(params: HeadParams, inp: np.ndarray, out_shape) -> tuple[np.ndarray, dict]:
    p = params.arrays
    name = params.kind.name
    if name == "ConstantPrior":
        return np.full(out_shape, p["b"][0]), {}
    if name == "LinearProbe":
        return inp @ p["W"][:, 0] + p["b"][0], {}
    W1 = p["W1"] if name == "PixelMLP" else p["K"].reshape(-1, params.kind.hidden)
    pre = inp @ W1 + p["b1"]
    hid = np.maximum(pre, 0.0)
    return hid @ p["W2"][:, 0] + p["b2"][0], {"pre": pre, "hid": hid}


def _backward(params: HeadParams, inp: np.ndarray, cache: dict, dz: np.ndarray) -> dict:
    p = params.arrays
    name = params.kind.name
    if name == "ConstantPrior":
        return {"b": np.array([dz.sum()])}
    flat_in = inp.reshape(-1, inp.shape[-1])
    flat_dz = dz.ravel()
    if name == "LinearProbe":
        return {"W": (flat_in.T @ flat_dz)[:, None], "b": np.array([flat_dz.sum()])}
    hid = cache["hid"].reshape(-1, params.kind.hidden)
    pre = cache["pre"].reshape(-1, params.kind.hidden)
    grads = {"W2": (hid.T @ flat_dz)[:, None], "b2": np.array([flat_dz.sum()])}
    dpre = np.outer(flat_dz, p["W2"][:, 0]) * (pre > 0)
    grads["b1"] = dpre.sum(axis=0)
    dW1 = flat_in.T @ dpre
    if name == "PixelMLP":
        grads["W1"] = dW1
    else:
        grads["K"] = dW1.reshape(p["K"].shape)
    return grads


def head_forward(params: HeadParams, features) -> np.ndarray:
    """Pre-sigmoid logits, shape ``(rows, cols)`` or ``(n, rows, cols)``."""
    x = np.asarray(features)
    single = x.ndim == 3
    x = _as_batch(x)
    if x.shape[1] != params.n_features:
        raise ShapeError(f"head expects {params.n_features} channels, got {x.shape[1]}")
    out_shape = (x.shape[0],) + x.shape[2:]
    z, _ = _forward(params, _inputs(params.kind, x), out_shape)
    return z[0] if single else z


def class_weighted_bce(logits, labels, w_pos: float, w_neg: float,
                       mask=None) -> tuple[float, np.ndarray]:
    """Mean class-weighted BCE over (masked) elements and its logit gradient.

    ``log sigma(z)`` and ``log(1 - sigma(z))`` are evaluated as
    ``-softplus(-z)`` and ``-softplus(z)``, which is stable for any finite z.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeError("logits and labels differ in shape")
    if w_pos <= 0 or w_neg <= 0:
        raise DataError("class weights must be positive")
    m = np.ones_like(z) if mask is None else np.broadcast_to(mask, z.shape).astype(np.float64)
    n = m.sum()
    if n == 0:
        raise DataError("loss mask selects no elements")
    per = w_pos * y * np.logaddexp(0.0, -z) + w_neg * (1.0 - y) * np.logaddexp(0.0, z)
    loss = float((per * m).sum() / n)
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    grad = (w_neg * (1.0 - y) * sig - w_pos * y * (1.0 - sig)) * m / n
    return loss, grad


def balanced_weights(labels, mask=None, scheme: str = "balanced") -> tuple[float, float]:
    """``w+ = N / (2 N+)`` and ``w- = N / (2 N-)``; an absent class gets weight 1."""
    y = np.asarray(labels, dtype=bool)
    if mask is not None:
        y = y[np.broadcast_to(mask, y.shape)]
    if scheme == "none":
        return 1.0, 1.0
    n, n_pos = y.size, int(y.sum())
    n_neg = n - n_pos
    w_pos = n / (2.0 * n_pos) if n_pos else 1.0
    w_neg = n / (2.0 * n_neg) if n_neg else 1.0
    return w_pos, w_neg


def init_params(kind: HeadKind, d: int, seed: int) -> HeadParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every block."""
    rng = stream(seed, "init", kind.name)
    fan_in = {"ConstantPrior": 1, "LinearProbe": d, "PixelMLP": d}.get(kind.name, 9 * d)
    arrays = {}
    for name, shape in param_shapes(kind, d).items():
        fan = kind.hidden if name in ("W2", "b2") else fan_in
        bound = 1.0 / np.sqrt(fan)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return HeadParams(kind, d, arrays)


def loss_and_grads(params: HeadParams, features, labels, w_pos: float, w_neg: float,
                   mask=None) -> tuple[float, dict]:
    x = _as_batch(features)
    inp = _inputs(params.kind, x)
    out_shape = (x.shape[0],) + x.shape[2:]
    z, cache = _forward(params, inp, out_shape)
    y = np.asarray(labels).reshape(out_shape)
    loss, dz = class_weighted_bce(z, y, w_pos, w_neg, mask)
    return loss, _backward(params, inp, cache, dz)


def train_head(kind: HeadKind, features_train, labels_train, cfg: TrainConfig, seed: int,
               mask=None, history: Optional[list] = None) -> HeadParams:
    """Fixed-budget SGD with momentum on class-weighted BCE.

    ``mask`` (broadcastable to ``(n, rows, cols)``) restricts the loss to
    in-scope pixels. Per-epoch losses are appended to ``history`` if given.
    """
    x = _as_batch(features_train)
    if not np.isfinite(x).all():
        raise DataError("features must be finite")
    out_shape = (x.shape[0],) + x.shape[2:]
    y = np.asarray(labels_train, dtype=np.float64).reshape(out_shape)
    sel = np.ones(out_shape, dtype=bool) if mask is None else np.broadcast_to(mask, out_shape)
    n_pos = int(y[sel].sum())
    if kind.name != "ConstantPrior" and (n_pos == 0 or n_pos == int(sel.sum())):
        raise SingleClassData(f"{kind} needs both positive and negative labels")
    w_pos, w_neg = balanced_weights(y, sel, cfg.weight_scheme)
    params = init_params(kind, x.shape[1], seed)
    # only in-scope pixels carry loss, so forward and backward run on those rows
    inp = _inputs(kind, x)
    rows = [np.flatnonzero(sel[i]) for i in range(x.shape[0])]

    def gather(b):
        return (np.concatenate([inp[i].reshape(-1, inp.shape[-1])[rows[i]] for i in b]),
                np.concatenate([y[i].ravel()[rows[i]] for i in b]))

    full = gather(range(x.shape[0])) if cfg.batch_size is None else None
    arrays = {k: v.copy() for k, v in params.arrays.items()}
    velocity = {k: np.zeros_like(v) for k, v in arrays.items()}
    batch_rng = stream(seed, "batches", kind.name)
    for _ in range(cfg.epochs):
        if full is not None:
            batches = [None]
        else:
            order = batch_rng.permutation(x.shape[0])
            batches = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
        epoch_loss = 0.0
        for b in batches:
            b_inp, b_y = full if b is None else gather(b)
            if not len(b_y):
                continue
            current = params.with_arrays(arrays)
            z, cache = _forward(current, b_inp, b_y.shape)
            loss, dz = class_weighted_bce(z, b_y, w_pos, w_neg)
            grads = _backward(current, b_inp, cache, dz)
            epoch_loss += loss
            for k in arrays:
                velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * grads[k]
                arrays[k] = arrays[k] + velocity[k]
        if history is not None:
            history.append(epoch_loss / len(batches))
    return params.with_arrays(arrays)


# --------------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class RankingPRAUC:
    """Select by PR-AUC of in-scope validation scores."""

    scope: ScopeMask

    def score(self, record: OutputRecord) -> float:
        sel = np.broadcast_to(self.scope.cells, record.spec.shape)
        return average_precision(record.scores.values[sel], record.labels.values[sel])


@dataclass(frozen=True)
class DecisionF1:
    """Select by decision F1 under ``rule`` at a validation-selected threshold.

    ``tau_rule`` is the matching rule used to pick the threshold; ``None``
    means the decision rule itself.
    """

    rule: MatchingRule
    scope: ScopeMask
    tau_rule: Optional[MatchingRule] = None

    def threshold(self, val_record: OutputRecord) -> float:
        return select_threshold(val_record, self.scope, self.tau_rule or self.rule)

    def score(self, record: OutputRecord) -> float:
        if self.tau_rule is None:
            # best F1 over the default candidates, i.e. F1 at select_threshold's choice
            sel = np.broadcast_to(self.scope.cells, record.spec.shape)
            cand = default_candidates(record.scores.values[sel])
            return float(f1_curve(record, self.scope, self.rule, cand).max())
        return decision_f1(record, self.threshold(record), self.rule, self.scope)

    def score_at(self, record: OutputRecord, tau: float) -> float:
        return decision_f1(record, tau, self.rule, self.scope)


Selector = _U[RankingPRAUC, DecisionF1]


@dataclass(frozen=True, eq=False)
class Candidate:
    params: HeadParams
    val_record: OutputRecord
    test_record: Optional[OutputRecord] = None

    @property
    def kind(self) -> HeadKind:
        return self.params.kind


def _argmax_by_head_order(cands: Sequence[Candidate], values: Sequence[float]) -> int:
    order = sorted(range(len(cands)), key=lambda i: cands[i].kind.order)
    best = order[0]
    for i in order[1:]:
        if values[i] > values[best]:
            best = i
    return best


def select_head(candidates: Sequence[Candidate], selector: Selector) -> Candidate:
    """Validation argmax of the selector score; ties follow the fixed head order."""
    if not candidates:
        raise NoCandidates("no candidate heads")
    values = [selector.score(c.val_record) for c in candidates]
    return candidates[_argmax_by_head_order(candidates, values)]


@dataclass(frozen=True)
class RegretResult:
    delta: float
    mode: str
    ranking_choice: str
    decision_choice: str
    ranking_scores: dict
    decision_scores: dict


REGRET_MODES = ("same", "held_out")


def selection_regret(candidates: Sequence[Candidate], ranking: RankingPRAUC,
                     decision: DecisionF1, mode: str = "same") -> RegretResult:
    """``D(h_D) - D(h_R)`` for PR-AUC-selected ``h_R`` vs decision-selected ``h_D``.

    ``mode="same"`` evaluates D on the validation split used for selection,
    so the result is never negative. ``mode="held_out"`` selects heads and
    thresholds on validation and evaluates D on each candidate's test record;
    the sign is then unconstrained and reported as is.
    """
    if mode not in REGRET_MODES:
        raise DataError(f"regret mode must be one of {REGRET_MODES}")
    if not candidates:
        raise NoCandidates("no candidate heads")
    if not (ranking.scope.kind == decision.scope.kind
            and np.array_equal(ranking.scope.cells, decision.scope.cells)):
        raise ContractViolation("ranking and decision selectors use different scopes")
    r_vals = [ranking.score(c.val_record) for c in candidates]
    d_vals = [decision.score(c.val_record) for c in candidates]
    i_r = _argmax_by_head_order(candidates, r_vals)
    i_d = _argmax_by_head_order(candidates, d_vals)
    if mode == "same":
        delta = d_vals[i_d] - d_vals[i_r]
    elif i_r == i_d:
        delta = 0.0
    else:
        test = []
        for i in (i_d, i_r):
            c = candidates[i]
            if c.test_record is None:
                raise DataError("held-out regret needs test records")
            tau = decision.threshold(c.val_record)
            test.append(decision.score_at(c.test_record, tau))
        delta = test[0] - test[1]
    names = [str(c.kind) for c in candidates]
    return RegretResult(float(delta), mode, names[i_r], names[i_d],
                        dict(zip(names, r_vals)), dict(zip(names, d_vals)))


def head_record(params: HeadParams, features, labels: LabelField) -> OutputRecord:
    """Score field of head logits paired with ``labels``."""
    z = head_forward(params, features)
    if z.ndim == 2:
        z = z[None]
    return OutputRecord(ScoreField(labels.spec, z.astype(np.float32)), labels)
