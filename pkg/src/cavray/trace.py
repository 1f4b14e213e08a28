"""Synthetic photon-count time traces.

A two-state continuous-time telegraph process switches between the
constructive (state 0, high rate) and destructive (state 1, low rate)
emission patterns with exponential dwell times.  Detector counts are Poisson
with the exact time-integrated rate per bin, so bins straddling a switch use
the time-weighted mean rate; the recorded truth label is the majority state.

Randomness comes from the counter-based Philox generator with one named
stream per purpose, so telegraph jumps and Poisson draws are independently
reproducible for a given seed:

    stream 0  telegraph switching times (and the stationary initial state)
    stream 1  Poisson counts

Trace files are CSV (``bin_index, t_start_s, counts[, truth_state]``) with a
JSON sidecar carrying the model parameters and seed; the round trip is
bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

STREAM_TELEGRAPH = 0
STREAM_COUNTS = 1

#: truth label for bins without a two-atom telegraph state (one or zero atoms)
NO_STATE = -1


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Philox generator for one named stream of a seeded trace."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class TelegraphModel:
    """Two-state jump model with detected rates per state (1/s).

    ``rate_cd`` is the jump rate constructive -> destructive, ``rate_dc`` the
    reverse.  ``r_high``/``r_low`` are the detected source rates in the two
    states and ``r_bg`` a state-independent background added to both.
    """

    rate_cd: float
    rate_dc: float
    r_high: float
    r_low: float
    r_bg: float = 0.0

    def __post_init__(self):
        for name in ("rate_cd", "rate_dc", "r_high", "r_low", "r_bg"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and non-negative, got {value!r}")
        if self.r_high < self.r_low:
            raise ValueError("r_high must be >= r_low")

    @property
    def stationary_constructive(self) -> float:
        total = self.rate_cd + self.rate_dc
        if total == 0.0:
            return 0.5
        return self.rate_dc / total


@dataclass(frozen=True)
class TelegraphPath:
    """Continuous-time state path: segment i occupies [times[i], times[i+1])
    (the last segment ends at ``duration``) in state states[i]."""

    times: np.ndarray
    states: np.ndarray
    duration: float


@dataclass
class PhotonTrace:
    """Binned photon counts with optional per-bin ground-truth state."""

    bin_width: float
    counts: np.ndarray
    truth_path: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or len(self.counts) < 1:
            raise ValueError("counts must be a non-empty 1-d sequence")
        if self.bin_width <= 0.0:
            raise ValueError(f"bin_width must be positive, got {self.bin_width!r}")
        if self.truth_path is not None:
            self.truth_path = np.asarray(self.truth_path, dtype=np.int64)
            if self.truth_path.shape != self.counts.shape:
                raise ValueError("truth_path must have the same length as counts")

    @property
    def duration(self) -> float:
        return len(self.counts) * self.bin_width


def sample_telegraph(model: TelegraphModel, duration: float, seed: int,
                     initial_state: int | None = None) -> TelegraphPath:
    """Sample a telegraph path over [0, duration).

    Dwell times are exponential with the current state's exit rate; a state
    with zero exit rate is absorbing.  The initial state is drawn from the
    stationary distribution unless given explicitly.
    """
    if duration <= 0.0:
        raise ValueError(f"duration must be positive, got {duration!r}")
    rng = stream_rng(seed, STREAM_TELEGRAPH)
    if initial_state is None:
        state = 0 if rng.random() < model.stationary_constructive else 1
    else:
        state = int(initial_state)
        if state not in (0, 1):
            raise ValueError(f"initial_state must be 0 or 1, got {initial_state!r}")
    exit_rates = (model.rate_cd, model.rate_dc)
    times = [0.0]
    states = [state]
    t = 0.0
    while True:
        rate = exit_rates[state]
        if rate == 0.0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= duration:
            break
        state = 1 - state
        times.append(t)
        states.append(state)
    return TelegraphPath(
        times=np.asarray(times), states=np.asarray(states, dtype=np.int64),
        duration=duration,
    )


def _state0_occupancy(path: TelegraphPath, edges: np.ndarray) -> np.ndarray:
    """Time spent in state 0 within each bin delimited by ``edges``.

    Uses the cumulative state-0 occupancy, piecewise linear in time, which
    np.interp evaluates exactly at the bin edges.
    """
    bounds = np.append(path.times, path.duration)
    seg_len = np.diff(bounds)
    cum = np.concatenate([[0.0], np.cumsum(np.where(path.states == 0, seg_len, 0.0))])
    occupancy = np.interp(edges, bounds, cum)
    return np.diff(occupancy)


def expected_bin_means(path: TelegraphPath, model: TelegraphModel,
                       bin_width: float, n_bins: int | None = None) -> np.ndarray:
    """Exact Poisson mean per bin: integral of the state rate plus background."""
    if bin_width <= 0.0:
        raise ValueError(f"bin_width must be positive, got {bin_width!r}")
    if n_bins is None:
        n_bins = int(round(path.duration / bin_width))
    edges = np.arange(n_bins + 1) * bin_width
    t_high = _state0_occupancy(path, edges)
    t_low = np.diff(edges) - t_high
    return model.r_high * t_high + model.r_low * t_low + model.r_bg * bin_width


def majority_states(path: TelegraphPath, bin_width: float,
                    n_bins: int | None = None) -> np.ndarray:
    """Majority-occupancy state per bin (ties labelled constructive)."""
    if n_bins is None:
        n_bins = int(round(path.duration / bin_width))
    edges = np.arange(n_bins + 1) * bin_width
    t_high = _state0_occupancy(path, edges)
    return np.where(t_high >= 0.5 * bin_width, 0, 1).astype(np.int64)


def synth_counts(path: TelegraphPath, model: TelegraphModel, bin_width: float,
                 seed: int) -> PhotonTrace:
    """Poisson counts for a telegraph path; see :func:`expected_bin_means`."""
    means = expected_bin_means(path, model, bin_width)
    rng = stream_rng(seed, STREAM_COUNTS)
    counts = rng.poisson(means)
    return PhotonTrace(
        bin_width=bin_width,
        counts=counts,
        truth_path=majority_states(path, bin_width),
        seed=seed,
    )


def synth_telegraph_trace(model: TelegraphModel, duration: float, bin_width: float,
                          seed: int) -> PhotonTrace:
    """Convenience: sample a path and bin its counts with one seed."""
    path = sample_telegraph(model, duration, seed)
    return synth_counts(path, model, bin_width, seed)


@dataclass(frozen=True)
class Region:
    """One segment of a multi-region trace, [t_start, t_end) spanning bins
    [bin_start, bin_end)."""

    label: str
    t_start: float
    t_end: float
    bin_start: int
    bin_end: int


@dataclass(frozen=True)
class LossScenario:
    """Atom-loss scenario: a two-atom telegraph region, a steady one-atom
    region and a background-only region.

    Default levels are read off typical detected traces: total rates of 12
    and 2 per ms in the two-atom patterns (background 2/ms included), about
    9 per ms with one atom and the bare 2/ms background with none.
    """

    telegraph: TelegraphModel = field(default_factory=lambda: TelegraphModel(
        rate_cd=3.0, rate_dc=3.0, r_high=10e3, r_low=0.0, r_bg=2e3))
    r_one_atom: float = 7e3     # one-atom source rate (1/s); background added
    durations: tuple[float, float, float] = (1.7, 2.2, 1.1)
    bin_width: float = 5e-3

    def __post_init__(self):
        if any(d <= 0.0 for d in self.durations):
            raise ValueError("region durations must be positive")
        if self.r_one_atom < 0.0:
            raise ValueError("r_one_atom must be non-negative")


def synth_loss_scenario(scenario: LossScenario, seed: int) -> tuple[PhotonTrace, list[Region]]:
    """Concatenated two-atom / one-atom / empty-cavity trace.

    Bins outside the telegraph region carry the truth label ``NO_STATE``.
    Region boundaries snap to whole bins.
    """
    w = scenario.bin_width
    model = scenario.telegraph
    n_bins = [int(round(d / w)) for d in scenario.durations]
    if any(n < 1 for n in n_bins):
        raise ValueError("each region must span at least one bin")

    path = sample_telegraph(model, n_bins[0] * w, seed)
    means_two = expected_bin_means(path, model, w, n_bins[0])
    truth_two = majority_states(path, w, n_bins[0])
    means_one = np.full(n_bins[1], (scenario.r_one_atom + model.r_bg) * w)
    means_zero = np.full(n_bins[2], model.r_bg * w)

    means = np.concatenate([means_two, means_one, means_zero])
    rng = stream_rng(seed, STREAM_COUNTS)
    counts = rng.poisson(means)
    truth = np.concatenate([
        truth_two,
        np.full(n_bins[1], NO_STATE, dtype=np.int64),
        np.full(n_bins[2], NO_STATE, dtype=np.int64),
    ])

    regions = []
    start = 0
    for label, n in zip(("two_atoms", "one_atom", "background"), n_bins):
        regions.append(Region(label=label, t_start=start * w, t_end=(start + n) * w,
                              bin_start=start, bin_end=start + n))
        start += n
    trace = PhotonTrace(bin_width=w, counts=counts, truth_path=truth, seed=seed)
    return trace, regions


TRACE_HEADER_BASE = "bin_index,t_start_s,counts"


def write_trace(csv_path: str | Path, trace: PhotonTrace, meta: dict | None = None):
    """Write the trace CSV plus a JSON sidecar (same basename, .json)."""
    csv_path = Path(csv_path)
    header = TRACE_HEADER_BASE + ("" if trace.truth_path is None else ",truth_state")
    lines = ["# schema=1", header]
    for i, c in enumerate(trace.counts):
        row = f"{i},{repr(i * trace.bin_width)},{int(c)}"
        if trace.truth_path is not None:
            row += f",{int(trace.truth_path[i])}"
        lines.append(row)
    with open(csv_path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")

    sidecar = {
        "bin_width_s": trace.bin_width,
        "n_bins": int(len(trace.counts)),
        "seed": trace.seed,
        "has_truth": trace.truth_path is not None,
    }
    if meta:
        sidecar.update(meta)
    sidecar_path = csv_path.with_suffix(".json")
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_trace(csv_path: str | Path) -> tuple[PhotonTrace, dict]:
    """Read a trace CSV and its sidecar; inverse of :func:`write_trace`."""
    csv_path = Path(csv_path)
    sidecar_path = csv_path.with_suffix(".json")
    meta = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}

    counts = []
    truths = []
    has_truth = False
    with open(csv_path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("bin_index"):
                has_truth = line.endswith("truth_state")
                continue
            parts = line.split(",")
            counts.append(int(parts[2]))
            if has_truth:
                truths.append(int(parts[3]))
    bin_width = float(meta.get("bin_width_s", 0.0))
    if bin_width <= 0.0:
        raise ValueError(f"sidecar of {csv_path} missing a positive bin_width_s")
    trace = PhotonTrace(
        bin_width=bin_width,
        counts=np.asarray(counts, dtype=np.int64),
        truth_path=np.asarray(truths, dtype=np.int64) if has_truth else None,
        seed=meta.get("seed"),
    )
    return trace, meta


def model_meta(model: TelegraphModel) -> dict:
    """Sidecar-ready dict of a telegraph model's parameters."""
    return {"telegraph": asdict(model)}
