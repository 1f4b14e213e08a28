import math

import numpy as np
import pytest

from cavray.trace import (
    NO_STATE,
    LossScenario,
    PhotonTrace,
    TelegraphModel,
    expected_bin_means,
    majority_states,
    model_meta,
    read_trace,
    sample_telegraph,
    stream_rng,
    synth_counts,
    synth_loss_scenario,
    synth_telegraph_trace,
    write_trace,
)

MODEL = TelegraphModel(rate_cd=5.0, rate_dc=5.0, r_high=12e3, r_low=2e3, r_bg=0.0)


# ----------------------------------------------------------------- validation

def test_model_validation():
    with pytest.raises(ValueError, match="rate_cd"):
        TelegraphModel(-1.0, 5.0, 12e3, 2e3)
    with pytest.raises(ValueError, match="r_high"):
        TelegraphModel(5.0, 5.0, 1e3, 2e3)


def test_trace_validation():
    with pytest.raises(ValueError, match="bin_width"):
        PhotonTrace(bin_width=0.0, counts=[1, 2])
    with pytest.raises(ValueError, match="truth_path"):
        PhotonTrace(bin_width=1e-3, counts=[1, 2], truth_path=[0])


# ------------------------------------------------------------------- telegraph

def test_frozen_telegraph_when_rates_vanish():
    m = TelegraphModel(0.0, 0.0, 12e3, 2e3)
    path = sample_telegraph(m, 1.0, seed=1, initial_state=0)
    assert len(path.times) == 1 and path.states[0] == 0


def test_absorbing_state():
    m = TelegraphModel(rate_cd=50.0, rate_dc=0.0, r_high=12e3, r_low=2e3)
    path = sample_telegraph(m, 100.0, seed=2, initial_state=0)
    assert path.states[-1] == 1 and len(path.times) == 2


def test_mean_dwell_matches_exponential_oracle():
    # ~1e4 dwells; sample mean of Exp(r) dwells within 3 sigma of 1/r
    rate = 5.0
    m = TelegraphModel(rate, rate, 12e3, 2e3)
    path = sample_telegraph(m, 2100.0, seed=3)
    dwells = np.diff(path.times)
    assert len(dwells) > 1e4
    se = (1.0 / rate) / math.sqrt(len(dwells))
    assert abs(dwells.mean() - 1.0 / rate) < 3 * se


def test_stationary_occupancy_fraction():
    m = TelegraphModel(rate_cd=4.0, rate_dc=8.0, r_high=12e3, r_low=2e3)
    duration = 500.0
    path = sample_telegraph(m, duration, seed=4)
    bounds = np.append(path.times, duration)
    seg = np.diff(bounds)
    frac = seg[path.states == 0].sum() / duration
    pi0 = m.stationary_constructive
    assert pi0 == pytest.approx(2.0 / 3.0, rel=1e-12)
    # asymptotic variance of the occupancy fraction of a 2-state chain
    sigma = math.sqrt(2 * pi0 ** 2 * (1 - pi0) ** 2 * (1 / 4.0 + 1 / 8.0) / duration)
    assert abs(frac - pi0) < 3 * sigma


def test_telegraph_determinism():
    a = sample_telegraph(MODEL, 10.0, seed=7)
    b = sample_telegraph(MODEL, 10.0, seed=7)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.states, b.states)
    c = sample_telegraph(MODEL, 10.0, seed=8)
    assert not np.array_equal(a.times, c.times)


# ---------------------------------------------------------------- poisson counts

def test_expected_means_constant_state():
    m = TelegraphModel(0.0, 0.0, 12e3, 2e3)
    path = sample_telegraph(m, 1.0, seed=1, initial_state=0)
    means = expected_bin_means(path, m, 5e-3)
    assert means.shape == (200,)
    assert np.allclose(means, 60.0)   # 12/ms high level, 5 ms bins


def test_low_level_mean_at_fine_bins():
    m = TelegraphModel(0.0, 0.0, 12e3, 0.0, r_bg=2e3)
    path = sample_telegraph(m, 0.1, seed=1, initial_state=1)
    means = expected_bin_means(path, m, 50e-6)
    assert np.allclose(means, 0.1)    # (0 + 2/ms) * 50 us


def test_zero_rates_give_zero_counts():
    m = TelegraphModel(0.0, 0.0, 0.0, 0.0, 0.0)
    tr = synth_telegraph_trace(m, 0.5, 5e-3, seed=9)
    assert tr.counts.sum() == 0


def test_straddling_bin_uses_time_weighted_rate():
    # one switch at t known exactly: construct a path by hand
    m = TelegraphModel(1.0, 1.0, 10e3, 2e3)
    path_times = np.array([0.0, 0.35e-3])
    path = type(sample_telegraph(m, 1e-3, 1))(
        times=path_times, states=np.array([0, 1]), duration=1e-3)
    means = expected_bin_means(path, m, 1e-3)
    expect = 10e3 * 0.35e-3 + 2e3 * 0.65e-3
    assert means[0] == pytest.approx(expect, rel=1e-12)
    assert majority_states(path, 1e-3)[0] == 1


def test_majority_tie_labels_constructive():
    m = TelegraphModel(1.0, 1.0, 10e3, 2e3)
    path = type(sample_telegraph(m, 1e-3, 1))(
        times=np.array([0.0, 0.5e-3]), states=np.array([0, 1]), duration=1e-3)
    assert majority_states(path, 1e-3)[0] == 0


def test_count_conservation_over_seeds():
    path = sample_telegraph(MODEL, 10.0, seed=10)
    means = expected_bin_means(path, MODEL, 5e-3)
    total_expected = means.sum()
    totals = [synth_counts(path, MODEL, 5e-3, seed=s).counts.sum() for s in range(30)]
    se = math.sqrt(total_expected / len(totals))
    assert abs(np.mean(totals) - total_expected) < 3 * se


def test_rebinning_means_exactly_additive():
    path = sample_telegraph(MODEL, 10.0, seed=11)
    fine = expected_bin_means(path, MODEL, 50e-6)
    coarse = expected_bin_means(path, MODEL, 5e-3)
    summed = fine.reshape(-1, 100).sum(axis=1)
    assert np.allclose(summed, coarse, rtol=1e-12, atol=1e-12)


def test_rebinning_count_statistics_consistent():
    path = sample_telegraph(MODEL, 10.0, seed=12)
    fine = synth_counts(path, MODEL, 50e-6, seed=1).counts.reshape(-1, 100).sum(axis=1)
    coarse = synth_counts(path, MODEL, 5e-3, seed=2).counts
    # same per-bin Poisson means, independent draws
    pooled_se = math.sqrt((fine.var() + coarse.var()) / len(fine))
    assert abs(fine.mean() - coarse.mean()) < 3 * pooled_se


def test_counts_determinism_bit_for_bit():
    t1 = synth_telegraph_trace(MODEL, 2.0, 50e-6, seed=21)
    t2 = synth_telegraph_trace(MODEL, 2.0, 50e-6, seed=21)
    assert np.array_equal(t1.counts, t2.counts)
    assert np.array_equal(t1.truth_path, t2.truth_path)


def test_streams_are_independent():
    # same seed, different purpose streams: different draws
    a = stream_rng(5, 0).random(4)
    b = stream_rng(5, 1).random(4)
    assert not np.allclose(a, b)


def test_truth_path_matches_majority_states():
    path = sample_telegraph(MODEL, 1.0, seed=13)
    tr = synth_counts(path, MODEL, 5e-3, seed=13)
    assert np.array_equal(tr.truth_path, majority_states(path, 5e-3))


# --------------------------------------------------------------- loss scenario

def test_loss_scenario_regions_and_levels():
    sc = LossScenario()
    tr, regions = synth_loss_scenario(sc, seed=3)
    assert [r.label for r in regions] == ["two_atoms", "one_atom", "background"]
    assert regions[0].bin_start == 0 and regions[-1].bin_end == len(tr.counts)

    one = regions[1]
    rate_one = tr.counts[one.bin_start:one.bin_end].mean() / tr.bin_width
    assert rate_one == pytest.approx(9e3, rel=0.05)        # ~9 per ms

    bg = regions[2]
    rate_bg = tr.counts[bg.bin_start:bg.bin_end].mean() / tr.bin_width
    se = math.sqrt(sc.telegraph.r_bg / (tr.bin_width * (bg.bin_end - bg.bin_start)))
    assert abs(rate_bg - sc.telegraph.r_bg) < 3 * se

    assert np.all(tr.truth_path[one.bin_start:] == NO_STATE)
    two = tr.truth_path[:regions[0].bin_end]
    assert set(np.unique(two)) <= {0, 1}


def test_loss_scenario_two_atom_histogram_is_bimodal():
    # unimodal threshold from a parametric bootstrap of the single-Poisson
    # null using a two-component mixture likelihood ratio as the statistic
    def mixture_lr(counts, n_iter=60):
        from scipy.stats import poisson
        counts = np.asarray(counts, float)
        lam = counts.mean()
        ll0 = poisson.logpmf(counts, lam).sum()
        lo, hi = np.quantile(counts, [0.25, 0.75])
        w, m = 0.5, np.array([max(lo, 0.1), max(hi, 0.2)])
        for _ in range(n_iter):
            logp = np.stack([np.log(w) + poisson.logpmf(counts, m[0]),
                             np.log1p(-w) + poisson.logpmf(counts, m[1])])
            r = np.exp(logp - logp.max(0))
            r /= r.sum(0)
            w = max(min(r[0].mean(), 1 - 1e-9), 1e-9)
            m[0] = (r[0] * counts).sum() / max(r[0].sum(), 1e-12)
            m[1] = (r[1] * counts).sum() / max(r[1].sum(), 1e-12)
        ll1 = np.logaddexp(np.log(w) + poisson.logpmf(counts, m[0]),
                           np.log1p(-w) + poisson.logpmf(counts, m[1])).sum()
        return ll1 - ll0

    sc = LossScenario()
    tr, regions = synth_loss_scenario(sc, seed=3)
    two = tr.counts[:regions[0].bin_end]
    stat = mixture_lr(two)

    rng = np.random.default_rng(99)
    null = [mixture_lr(rng.poisson(two.mean(), size=len(two))) for _ in range(30)]
    assert stat > 10 * max(null)


def test_loss_scenario_determinism():
    a, _ = synth_loss_scenario(LossScenario(), seed=5)
    b, _ = synth_loss_scenario(LossScenario(), seed=5)
    assert np.array_equal(a.counts, b.counts)


# -------------------------------------------------------------------------- io

def test_trace_io_round_trip_bit_exact(tmp_path):
    tr = synth_telegraph_trace(MODEL, 0.5, 5e-3, seed=17)
    path = tmp_path / "trace.csv"
    write_trace(path, tr, model_meta(MODEL))
    back, meta = read_trace(path)
    assert np.array_equal(back.counts, tr.counts)
    assert np.array_equal(back.truth_path, tr.truth_path)
    assert back.bin_width == tr.bin_width
    assert back.seed == 17
    assert meta["telegraph"]["r_high"] == 12e3

    # writing the read-back trace reproduces the file byte for byte
    path2 = tmp_path / "again.csv"
    write_trace(path2, back, {"telegraph": meta["telegraph"], "preset": meta.get("preset")})
    body = lambda p: p.read_text().splitlines()[2:]
    assert body(path) == body(path2)


def test_read_trace_without_truth(tmp_path):
    tr = PhotonTrace(bin_width=1e-3, counts=[3, 1, 4])
    write_trace(tmp_path / "t.csv", tr)
    back, _ = read_trace(tmp_path / "t.csv")
    assert back.truth_path is None
    assert list(back.counts) == [3, 1, 4]
