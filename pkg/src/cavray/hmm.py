"""Two-state Poisson hidden Markov analysis of photon-count traces.

State 0 is the constructive (high-rate) pattern, state 1 the destructive
(low-rate) one.  The forward-backward pass runs in the scaled domain with a
per-bin shift of the log emissions, which keeps 2e5-bin traces stable; the
Poisson means carry a 1e-12 floor so no observation has zero probability
under both states.

Per-bin transition probabilities convert to continuous-time jump rates via
the exact two-state embedding rate = -ln(1 - p_switch)/bin_width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import gammaln

from .trace import PhotonTrace

MEAN_FLOOR = 1e-12

#: fitted per-bin switch probability above which the two states mix faster
#: than the bin resolution resolves, i.e. there is no telegraph structure
MEMORYLESS_SWITCH_PROB = 0.2


@dataclass
class HmmModel:
    """Per-bin transition matrix, Poisson means (counts/bin) and initial law."""

    trans: np.ndarray
    emit_means: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        self.trans = np.asarray(self.trans, dtype=float)
        self.emit_means = np.asarray(self.emit_means, dtype=float)
        self.initial = np.asarray(self.initial, dtype=float)
        if self.trans.shape != (2, 2):
            raise ValueError("trans must be 2x2")
        if np.any(self.trans < 0.0) or np.any(self.trans > 1.0):
            raise ValueError("trans entries must lie in [0, 1]")
        if not np.allclose(self.trans.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("trans rows must sum to 1")
        if self.emit_means.shape != (2,) or np.any(self.emit_means < 0.0):
            raise ValueError("emit_means must be two non-negative values")
        if self.initial.shape != (2,) or np.any(self.initial < 0.0) \
                or not math.isclose(float(self.initial.sum()), 1.0, abs_tol=1e-9):
            raise ValueError("initial must be a 2-vector summing to 1")


@dataclass
class DwellStats:
    """Viterbi dwell-time summary per state (seconds)."""

    dwells: tuple[np.ndarray, np.ndarray]
    mean: tuple[float, float]
    stderr: tuple[float, float]
    n_dwells: tuple[int, int]


@dataclass
class HmmResult:
    """Posteriors, decoded path and (when fitted) the trained model."""

    posteriors: np.ndarray
    viterbi_path: np.ndarray | None
    log_likelihood: float
    fitted: HmmModel
    rates: tuple[float, float]
    rate_stderr: tuple[float, float] = (float("nan"), float("nan"))
    n_iter: int = 0
    loglik_trace: list[float] = field(default_factory=list)
    degenerate: bool = False


@njit(cache=True)
def _forward(e, trans, initial):
    n = e.shape[0]
    alpha = np.empty((n, 2))
    c = np.empty(n)
    a0 = initial[0] * e[0, 0]
    a1 = initial[1] * e[0, 1]
    s = a0 + a1
    if s <= 0.0:
        s = 1e-300
    c[0] = s
    alpha[0, 0] = a0 / s
    alpha[0, 1] = a1 / s
    for t in range(1, n):
        a0 = (alpha[t - 1, 0] * trans[0, 0] + alpha[t - 1, 1] * trans[1, 0]) * e[t, 0]
        a1 = (alpha[t - 1, 0] * trans[0, 1] + alpha[t - 1, 1] * trans[1, 1]) * e[t, 1]
        s = a0 + a1
        if s <= 0.0:
            s = 1e-300
        c[t] = s
        alpha[t, 0] = a0 / s
        alpha[t, 1] = a1 / s
    return alpha, c


@njit(cache=True)
def _backward(e, trans, c):
    n = e.shape[0]
    beta = np.empty((n, 2))
    beta[n - 1, 0] = 1.0
    beta[n - 1, 1] = 1.0
    for t in range(n - 2, -1, -1):
        b0 = e[t + 1, 0] * beta[t + 1, 0]
        b1 = e[t + 1, 1] * beta[t + 1, 1]
        beta[t, 0] = (trans[0, 0] * b0 + trans[0, 1] * b1) / c[t + 1]
        beta[t, 1] = (trans[1, 0] * b0 + trans[1, 1] * b1) / c[t + 1]
    return beta


@njit(cache=True)
def _xi_sums(e, trans, alpha, beta, c):
    n = e.shape[0]
    xi = np.zeros((2, 2))
    for t in range(n - 1):
        for i in range(2):
            for j in range(2):
                xi[i, j] += alpha[t, i] * trans[i, j] * e[t + 1, j] \
                    * beta[t + 1, j] / c[t + 1]
    return xi


@njit(cache=True)
def _viterbi_path(loge, logtrans, loginit):
    n = loge.shape[0]
    psi = np.empty((n, 2), dtype=np.int64)
    d0 = loginit[0] + loge[0, 0]
    d1 = loginit[1] + loge[0, 1]
    for t in range(1, n):
        n0 = d0
        n1 = d1
        # strict comparisons keep ties on the lower state index
        if n0 + logtrans[0, 0] >= n1 + logtrans[1, 0]:
            d0_new = n0 + logtrans[0, 0]
            psi[t, 0] = 0
        else:
            d0_new = n1 + logtrans[1, 0]
            psi[t, 0] = 1
        if n0 + logtrans[0, 1] >= n1 + logtrans[1, 1]:
            d1_new = n0 + logtrans[0, 1]
            psi[t, 1] = 0
        else:
            d1_new = n1 + logtrans[1, 1]
            psi[t, 1] = 1
        d0 = d0_new + loge[t, 0]
        d1 = d1_new + loge[t, 1]
    path = np.empty(n, dtype=np.int64)
    path[n - 1] = 0 if d0 >= d1 else 1
    for t in range(n - 2, -1, -1):
        path[t] = psi[t + 1, path[t + 1]]
    return path


def poisson_log_emissions(counts: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Log pmf of each count under each state's Poisson mean, shape (T, 2)."""
    counts = np.asarray(counts, dtype=float)
    means = np.maximum(np.asarray(means, dtype=float), MEAN_FLOOR)
    return counts[:, None] * np.log(means)[None, :] - means[None, :] \
        - gammaln(counts + 1.0)[:, None]


def _shifted_emissions(counts, means):
    loge = poisson_log_emissions(counts, means)
    shift = loge.max(axis=1)
    return np.exp(loge - shift[:, None]), shift


def log_likelihood(trace: PhotonTrace, model: HmmModel,
                   direction: str = "forward") -> float:
    """Trace log likelihood via the forward or the backward recursion; the
    two agree to rounding and serve as a numerical cross-check."""
    e, shift = _shifted_emissions(trace.counts, model.emit_means)
    alpha, c = _forward(e, model.trans, model.initial)
    if direction == "forward":
        return float(np.sum(np.log(c)) + np.sum(shift))
    if direction == "backward":
        beta = _backward(e, model.trans, c)
        first = float(np.sum(model.initial * e[0] * beta[0]))
        return float(math.log(max(first, 1e-300)) + np.sum(np.log(c[1:])) + np.sum(shift))
    raise ValueError(f"unknown direction {direction!r}")


def _safe_rates(model: HmmModel, bin_width: float) -> tuple[float, float]:
    try:
        return jump_rates(model, bin_width)
    except ValueError:
        return (float("inf"), float("inf"))


def forward_backward(trace: PhotonTrace, model: HmmModel) -> HmmResult:
    """Smoothed posteriors and log likelihood under a fixed model."""
    e, shift = _shifted_emissions(trace.counts, model.emit_means)
    alpha, c = _forward(e, model.trans, model.initial)
    beta = _backward(e, model.trans, c)
    post = alpha * beta
    post /= post.sum(axis=1, keepdims=True)
    ll = float(np.sum(np.log(c)) + np.sum(shift))
    return HmmResult(
        posteriors=post,
        viterbi_path=viterbi(trace, model),
        log_likelihood=ll,
        fitted=model,
        rates=_safe_rates(model, trace.bin_width),
    )


def viterbi(trace: PhotonTrace, model: HmmModel) -> np.ndarray:
    """Most probable state path; ties break toward the lower state index."""
    loge = poisson_log_emissions(trace.counts, model.emit_means)
    logtrans = np.log(np.maximum(model.trans, 1e-300))
    loginit = np.log(np.maximum(model.initial, 1e-300))
    return _viterbi_path(loge, logtrans, loginit)


def initial_guess(counts: np.ndarray, p_switch: float = 1e-3) -> HmmModel:
    """Starting model from a 2-quantile split of the counts.

    The high/low half means seed the two Poisson states (nudged apart when
    the split is degenerate) and both switch probabilities start at
    ``p_switch``.
    """
    counts = np.asarray(counts, dtype=float)
    median = np.median(counts)
    hi = counts[counts > median]
    lo = counts[counts <= median]
    m_hi = float(hi.mean()) if hi.size else float(counts.mean())
    m_lo = float(lo.mean()) if lo.size else float(counts.mean())
    if m_hi - m_lo < 1e-6:
        spread = max(0.5, 0.25 * max(m_hi, 1.0))
        m_hi, m_lo = m_hi + spread, max(m_lo - spread, 0.0)
    trans = np.array([[1.0 - p_switch, p_switch], [p_switch, 1.0 - p_switch]])
    return HmmModel(trans=trans, emit_means=np.array([m_hi, m_lo]),
                    initial=np.array([0.5, 0.5]))


def _order_high_first(model: HmmModel) -> tuple[HmmModel, bool]:
    if model.emit_means[0] >= model.emit_means[1]:
        return model, False
    perm = [1, 0]
    return HmmModel(
        trans=model.trans[np.ix_(perm, perm)].copy(),
        emit_means=model.emit_means[perm].copy(),
        initial=model.initial[perm].copy(),
    ), True


def baum_welch(trace: PhotonTrace, init: HmmModel | None = None,
               max_iter: int = 200, tol: float = 1e-3) -> HmmResult:
    """Fit the two-state Poisson HMM by expectation maximization.

    Stops when the log-likelihood gain drops below ``tol`` (nats) or after
    ``max_iter`` iterations.  The fitted result keeps state 0 as the
    high-mean state and is flagged ``degenerate`` when the two states
    collapse, as happens on unimodal input: mean gap below the Poisson
    noise scale, memoryless mixing (per-bin switch probability >= 0.2), or
    a log-likelihood gain over the best single-Poisson model below the
    4-parameter BIC penalty 2*ln(n_bins).
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if len(trace.counts) < 2:
        raise ValueError("need at least 2 bins to fit transition probabilities")
    counts = np.asarray(trace.counts, dtype=float)
    model = init if init is not None else initial_guess(counts)
    trans = model.trans.copy()
    means = model.emit_means.copy()
    initial = model.initial.copy()

    lls: list[float] = []
    n_iter = 0
    for _ in range(max_iter):
        e, shift = _shifted_emissions(counts, means)
        alpha, c = _forward(e, trans, initial)
        beta = _backward(e, trans, c)
        ll = float(np.sum(np.log(c)) + np.sum(shift))
        gamma = alpha * beta
        gamma /= gamma.sum(axis=1, keepdims=True)
        xi = _xi_sums(e, trans, alpha, beta, c)

        occ = np.maximum(gamma[:-1].sum(axis=0), 1e-300)
        trans = xi / occ[:, None]
        trans = np.clip(trans, 0.0, 1.0)
        trans /= trans.sum(axis=1, keepdims=True)
        weights = np.maximum(gamma.sum(axis=0), 1e-300)
        means = (gamma * counts[:, None]).sum(axis=0) / weights
        initial = gamma[0].copy()

        n_iter += 1
        if lls and ll - lls[-1] < tol:
            lls.append(ll)
            break
        lls.append(ll)

    fitted, swapped = _order_high_first(
        HmmModel(trans=trans, emit_means=means, initial=initial))
    final = forward_backward(trace, fitted)

    occ = np.maximum(final.posteriors[:-1].sum(axis=0), 1.0)
    p01, p10 = fitted.trans[0, 1], fitted.trans[1, 0]
    se01 = math.sqrt(p01 * (1.0 - p01) / occ[0]) / max(1.0 - p01, 1e-12) / trace.bin_width
    se10 = math.sqrt(p10 * (1.0 - p10) / occ[1]) / max(1.0 - p10, 1e-12) / trace.bin_width

    mean_bar = float(counts.mean())
    gap_floor = 0.25 * math.sqrt(max(mean_bar, 1e-2))
    loge0 = poisson_log_emissions(counts, np.array([mean_bar, mean_bar]))[:, 0]
    lr_single = final.log_likelihood - float(loge0.sum())
    degenerate = bool(
        abs(fitted.emit_means[0] - fitted.emit_means[1]) < gap_floor
        or max(p01, p10) >= MEMORYLESS_SWITCH_PROB
        or lr_single < 2.0 * math.log(len(counts))
    )

    return HmmResult(
        posteriors=final.posteriors,
        viterbi_path=final.viterbi_path,
        log_likelihood=final.log_likelihood,
        fitted=fitted,
        rates=_safe_rates(fitted, trace.bin_width),
        rate_stderr=(se01, se10),
        n_iter=n_iter,
        loglik_trace=lls + [final.log_likelihood],
        degenerate=degenerate,
    )


def jump_rates(model: HmmModel, bin_width: float) -> tuple[float, float]:
    """Continuous-time jump rates from the per-bin switch probabilities,
    rate = -ln(1 - p_switch)/bin_width (1/s)."""
    if bin_width <= 0.0:
        raise ValueError(f"bin_width must be positive, got {bin_width!r}")
    p01, p10 = float(model.trans[0, 1]), float(model.trans[1, 0])
    for p in (p01, p10):
        if p >= 1.0:
            raise ValueError("switch probability 1 implies an infinite jump rate")
    return (-math.log1p(-p01) / bin_width, -math.log1p(-p10) / bin_width)


def dwell_statistics(result: HmmResult | np.ndarray, bin_width: float) -> DwellStats:
    """Dwell-time lists, means and standard errors from a decoded path.

    First and last dwells are censored by the trace edges and included as-is.
    """
    if isinstance(result, HmmResult):
        if result.viterbi_path is None:
            raise ValueError("result has no viterbi path")
        path = result.viterbi_path
    else:
        path = np.asarray(result, dtype=np.int64)
    if path.ndim != 1 or len(path) < 1:
        raise ValueError("path must be a non-empty 1-d sequence")

    change = np.flatnonzero(np.diff(path)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(path)]])
    lengths = (ends - starts) * bin_width
    states = path[starts]

    dwells = tuple(lengths[states == s] for s in (0, 1))
    mean = tuple(float(d.mean()) if d.size else float("nan") for d in dwells)
    stderr = tuple(
        float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else float("nan")
        for d in dwells
    )
    return DwellStats(dwells=dwells, mean=mean, stderr=stderr,
                      n_dwells=(int(dwells[0].size), int(dwells[1].size)))
