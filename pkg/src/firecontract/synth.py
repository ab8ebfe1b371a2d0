"""Deterministic synthetic inputs with planted structure.

All generators are pure functions of their configuration and seed; random
draws come from :func:`firecontract.rng.stream` with a distinct stream key
per component.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvalidSceneConfig
from .grid import GridSpec, LabelField, OutputRecord, ScoreField, TimeSplit
from .metrics import EventTable, StationSeries
from .rng import stream


@dataclass(frozen=True)
class SceneConfig:
    """Occupancy scene: square (Chebyshev) fire discs and displaced scores."""

    spec: GridSpec = field(default_factory=lambda: GridSpec(8, 64, 64))
    n_events: int = 10
    event_radius: int = 1
    displacement: tuple = (0, 0)
    score_noise_sd: float = 0.0
    false_alarm_rate: float = 0.0
    seed: int = 0
    duration: int = 0  # active steps per event; 0 = half the time axis

    def __post_init__(self):
        if self.event_radius < 0:
            raise InvalidSceneConfig("event_radius must be >= 0")
        if not (0 <= self.false_alarm_rate < 1):
            raise InvalidSceneConfig("false_alarm_rate must be in [0, 1)")
        if self.score_noise_sd < 0:
            raise InvalidSceneConfig("score_noise_sd must be >= 0")
        if self.n_events < 0:
            raise InvalidSceneConfig("n_events must be >= 0")
        object.__setattr__(self, "displacement", tuple(int(v) for v in self.displacement))

    @property
    def active_steps(self) -> int:
        return self.duration or max(1, self.spec.n_times // 2)


def _place_centers(cfg: SceneConfig, rng: np.random.Generator, max_tries: int = 10_000):
    r = cfg.event_radius
    dr, dc = cfg.displacement
    # both the label disc and its displaced copy must fit inside the grid
    row_lo, row_hi = r + max(0, -dr), cfg.spec.n_rows - 1 - r - max(0, dr)
    col_lo, col_hi = r + max(0, -dc), cfg.spec.n_cols - 1 - r - max(0, dc)
    if row_lo > row_hi or col_lo > col_hi:
        raise InvalidSceneConfig("discs do not fit the grid with this displacement")
    # displaced discs never overlap another event's label disc
    sep = 2 * r + 2 + max(abs(dr), abs(dc))
    centers = []
    tries = 0
    while len(centers) < cfg.n_events:
        tries += 1
        if tries > max_tries:
            raise InvalidSceneConfig(f"could not place {cfg.n_events} separated events")
        c = (int(rng.integers(row_lo, row_hi + 1)), int(rng.integers(col_lo, col_hi + 1)))
        if all(max(abs(c[0] - o[0]), abs(c[1] - o[1])) >= sep for o in centers):
            centers.append(c)
    return centers


def generate_occupancy_scene(cfg: SceneConfig) -> tuple[OutputRecord, np.ndarray]:
    """Labelled discs, scores on displaced discs, and a feature stack.

    Noise-free scores are 1.0 at a disc centre falling linearly to 0.8 on
    its rim and 0 elsewhere. Noise adds N(0, sd) everywhere; false alarms
    put Uniform(0.5, 1.0) scores on a random ``false_alarm_rate`` share of
    cells. Features are ``(n_times, 4, rows, cols)``: score surface,
    smoothed distractor noise, row and column coordinates in [0, 1].
    """
    spec = cfg.spec
    T, R, C = spec.shape
    rng = stream(cfg.seed, "scene")
    centers = _place_centers(cfg, rng)
    steps = min(cfg.active_steps, T)
    starts = rng.integers(0, T - steps + 1, size=len(centers))
    r = cfg.event_radius
    dr, dc = cfg.displacement
    labels = np.zeros(spec.shape, dtype=bool)
    scores = np.zeros(spec.shape, dtype=np.float64)
    ring = np.maximum.outer(np.abs(np.arange(-r, r + 1)), np.abs(np.arange(-r, r + 1)))
    disc_score = 1.0 - 0.2 * ring / max(r, 1)
    for (row, col), t0 in zip(centers, starts):
        ts = slice(int(t0), int(t0) + steps)
        labels[ts, row - r:row + r + 1, col - r:col + r + 1] = True
        pr, pc = row + dr, col + dc
        block = scores[ts, pr - r:pr + r + 1, pc - r:pc + r + 1]
        np.maximum(block, disc_score, out=block)
    if cfg.score_noise_sd:
        scores += stream(cfg.seed, "noise").normal(0.0, cfg.score_noise_sd, size=spec.shape)
    if cfg.false_alarm_rate:
        fa_rng = stream(cfg.seed, "false_alarms")
        hits = fa_rng.random(spec.shape) < cfg.false_alarm_rate
        scores[hits] = np.maximum(scores[hits], fa_rng.uniform(0.5, 1.0, size=int(hits.sum())))
    distractor = stream(cfg.seed, "distractor").normal(size=spec.shape)
    distractor = (distractor + np.roll(distractor, 1, 1) + np.roll(distractor, 1, 2)) / 3.0
    rows = np.broadcast_to(np.linspace(0, 1, R)[None, :, None], spec.shape)
    cols = np.broadcast_to(np.linspace(0, 1, C)[None, None, :], spec.shape)
    features = np.stack([scores, distractor, rows, cols], axis=1)
    record = OutputRecord(ScoreField(spec, scores), LabelField(spec, labels))
    return record, features


# --------------------------------------------------------------------------
# regret scenario


@dataclass(frozen=True)
class RegretScenario:
    features: np.ndarray
    labels: LabelField
    split: TimeSplit
    prone_cells: np.ndarray  # designated fire-prone spatial block


def generate_regret_scenario(seed: int = 0, n_times: int = 24, size: int = 48,
                             block: int = 18, n_prone: float = 6.0, n_far: float = 1.5
                             ) -> RegretScenario:
    """Data on which PR-AUC and decision-F1 head selection disagree.

    Fires are 3x3 clusters: about ``n_prone`` per step inside a corner block
    of ``block x block`` cells and ``n_far`` per step in a far field at least
    12 cells from the block, beyond the occupancy tolerance.

    Channel 0 is Gaussian noise plus a sign-random spike of magnitude ~4 on
    block fires only. Only heads with a nonlinearity can use it; they rank
    block fires first and so win on PR-AUC, but their strict-F1 threshold
    stops at that sharp tier and far fires stay unmatched. Channel 1 marks
    a 7x7 plume around every fire, offset at random so that neither a pixel
    nor its 3x3 context reveals where in the plume the fire sits. It ranks
    poorly but every plume cell lies within tolerance of a fire, so a head
    leaning on it scores near-perfect union F1. Inside the block every fire
    is sharp, so the two selectors mostly agree there.
    """
    T, R, C = n_times, size, size
    if block + 16 > size:
        raise InvalidSceneConfig("grid too small for the block and far field")
    spec = GridSpec(T, R, C)
    rng = stream(seed, "regret")
    prone = np.zeros((R, C), dtype=bool)
    prone[2:2 + block, 2:2 + block] = True
    inner = np.argwhere(prone[1:-1, 1:-1]) + 1
    edge = 2 + block + 12
    far = np.argwhere(np.ones((R - 2, C - 2), dtype=bool)) + 1
    far = far[(far[:, 0] > edge) | (far[:, 1] > edge)]
    labels = np.zeros(spec.shape, dtype=bool)
    sharp = rng.normal(0.0, 1.0, size=spec.shape)
    plume = np.zeros(spec.shape, dtype=bool)
    for t in range(T):
        fires = [(inner[i], True) for i in rng.integers(len(inner), size=rng.poisson(n_prone))]
        fires += [(far[i], False) for i in rng.integers(len(far), size=rng.poisson(n_far))]
        for (r, c), is_sharp in fires:
            labels[t, r - 1:r + 2, c - 1:c + 2] = True
            if is_sharp:
                spike = rng.choice((-1.0, 1.0)) * rng.normal(4.0, 0.5)
                sharp[t, r - 1:r + 2, c - 1:c + 2] += spike
            pr, pc = rng.integers(-2, 3, size=2)
            pr, pc = r + pr, c + pc
            plume[t, max(pr - 3, 0):pr + 4, max(pc - 3, 0):pc + 4] = True
    broad = 2.5 * plume + rng.normal(0.0, 0.5, size=spec.shape)
    features = np.stack([sharp, broad], axis=1)
    n_train = int(round(0.6 * T))
    n_val = int(round(0.2 * T))
    split = TimeSplit(range(0, n_train), range(n_train, n_train + n_val),
                      range(n_train + n_val, T))
    return RegretScenario(features, LabelField(spec, labels), split, prone)


# --------------------------------------------------------------------------
# event tables and station series


def generate_event_table(n_events: int = 200, seed: int = 0, n_features: int = 4,
                         noise: float = 0.3) -> EventTable:
    """Events whose log10 area is linear in a latent driver.

    Features are the latent driver along a fixed unit direction plus
    ``noise``-scaled Gaussian nuisance, and log10 area = 2 + 1.2 * latent +
    ``noise``-scaled Gaussian error. With ``noise = 0`` a linear regressor
    is exact and feature distance orders events by log-area distance.
    Splits are 60/20/20 in event order.
    """
    if n_events < 10:
        raise DataError("need at least 10 events")
    rng = stream(seed, "events")
    latent = rng.normal(0.0, 1.0, size=n_events)
    direction = rng.normal(size=n_features)
    direction /= np.linalg.norm(direction)
    features = latent[:, None] * direction[None, :]
    features = features + noise * rng.normal(size=(n_events, n_features))
    log_area = 2.0 + 1.2 * latent + noise * rng.normal(size=n_events)
    n_train, n_val = int(0.6 * n_events), int(0.2 * n_events)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * (n_events - n_train - n_val)
    ids = tuple(f"E{i:05d}" for i in range(n_events))
    return EventTable(ids, features, 10.0 ** log_area, tuple(splits))


def generate_station_series(n_stations: int = 20, n_times: int = 120, kind: str = "smoke",
                            seed: int = 0, bias: float = 0.0, noise: float = 0.0
                            ) -> StationSeries:
    """Seasonal series with spikes; predictions are observed + bias + noise.

    Smoke series are PM2.5 in ug/m3 with spikes well above 35; heat series
    are temperatures in deg C with heat waves above 30.
    """
    if n_stations < 1 or n_times < 1:
        raise DataError("counts must be >= 1")
    if kind not in ("smoke", "heat"):
        raise DataError("kind must be 'smoke' or 'heat'")
    rng = stream(seed, "stations", kind)
    t = np.arange(n_times)
    if kind == "smoke":
        base, amp, spike, unit = 12.0, 6.0, 40.0, "ug/m3"
    else:
        base, amp, spike, unit = 24.0, 5.0, 9.0, "degC"
    sid, tid, obs = [], [], []
    for s in range(n_stations):
        phase = rng.uniform(0, 2 * np.pi)
        series = base + amp * np.sin(2 * np.pi * t / max(n_times, 2) + phase)
        series = series + rng.normal(0.0, 1.0, size=n_times)
        n_spikes = max(1, n_times // 20)
        for start in rng.integers(0, n_times, size=n_spikes):
            length = int(rng.integers(1, 4))
            series[start:start + length] += spike * rng.uniform(0.8, 1.2)
        if kind == "smoke":
            series = np.maximum(series, 0.5)
        sid.extend([f"S{s:03d}"] * n_times)
        tid.extend(t.tolist())
        obs.extend(series.tolist())
    obs = np.asarray(obs)
    pred = obs + bias
    if noise:
        pred = pred + stream(seed, "station_noise", kind).normal(0.0, noise, size=len(obs))
    return StationSeries(np.asarray(sid), np.asarray(tid), obs, pred, unit)
