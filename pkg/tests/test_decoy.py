import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imperfect_qkd._warn import ClampWarning
from imperfect_qkd.decoy import (BitBounds, CountsError, DecoyBounds, DecoyError, IntensityConfig,
                                 RawCounts, SecurityParams, asymptotic_rate, binary_entropy,
                                 decoy_bounds, error_count_upper, finite_key_correction,
                                 hoeffding_width, key_length, poisson_tau,
                                 single_photon_bit_error_bounds, single_photon_bounds,
                                 zero_photon_bounds)
from imperfect_qkd.simulator import (ChannelModel, expected_statistics, gllp_key_length,
                                     synthesize_counts)

import oracles

SEC = SecurityParams()
EPS = 1e-9 / 19

# s_z1L for the 25 km counts, frozen after agreeing with the oracle below
S_Z1L_25KM = 64410147.964627855


def _scope_args(counts, basis, bits):
    g = lambda kind, k: sum(counts.cells[f"{kind}_{basis}{i}_{k}"] for i in bits)  # noqa: E731
    return g("n", "mu"), g("n", "nu"), g("m", "mu"), g("m", "nu")


@pytest.mark.parametrize("x,expected", [(0.0, 0.0), (1.0, 0.0), (0.5, 1.0)])
def test_entropy_trivial(x, expected):
    assert binary_entropy(x) == expected


def test_entropy_value():
    assert binary_entropy(0.11) == pytest.approx(float(oracles.h2(0.11)), abs=1e-15)
    assert binary_entropy(0.11) == pytest.approx(0.49992, abs=5e-6)


@pytest.mark.parametrize("x", [-0.01, 1.01])
def test_entropy_domain(x):
    with pytest.raises(DecoyError):
        binary_entropy(x)


def test_correction_trivial():
    assert finite_key_correction(2, 2, math.exp(-1), 0.0, 1.0, "+") == pytest.approx(3.0)
    assert finite_key_correction(2, 2, math.exp(-1), 0.0, 1.0, "-") == pytest.approx(1.0)


def test_correction_clamps():
    with pytest.warns(ClampWarning):
        assert finite_key_correction(0, 100, 0.1, 0.2, 0.5, "-") == 0.0


def test_correction_rejects_zero_probability():
    with pytest.raises(DecoyError):
        finite_key_correction(1, 2, 0.1, 0.1, 0.0, "+")


def test_correction_reference_counts(datasets):
    c = datasets[25]["counts"]
    n_mu, n_tot = c.n("z", "mu"), c.n("z", "mu") + c.n("z", "nu")
    ref = math.exp(0.45) / 0.84 * (n_mu + math.sqrt(n_tot / 2 * math.log(1 / EPS)))
    assert finite_key_correction(n_mu, n_tot, EPS, 0.45, 0.84, "+") == pytest.approx(ref, rel=1e-14)


def test_hoeffding_coverage():
    rng = np.random.default_rng(2024)
    trials, T, p, eps = 10_000, 500, 0.3, 0.05
    x = rng.binomial(T, p, trials)
    w = hoeffding_width(T, eps)
    hit = np.mean((x - w <= T * p) & (T * p <= x + w))
    sigma = math.sqrt(2 * eps * (1 - 2 * eps) / trials)
    assert hit >= 1 - 2 * eps - 3 * sigma


def test_tau_limit():
    assert poisson_tau(0, 0.0, 0.1, 1.0, 0.0) == 1.0
    assert poisson_tau(1, 0.0, 0.1, 1.0, 0.0) == 0.0


def test_tau_hand_value():
    ref = 0.84 * 0.45 * math.exp(-0.45) + 0.16 * 0.1125 * math.exp(-0.1125)
    assert poisson_tau(1, 0.45, 0.1125, 0.84, 0.16) == pytest.approx(ref, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.02, 2), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_tau_mass(mu, frac, p_mu):
    nu = mu * frac
    assert poisson_tau(0, mu, nu, p_mu, 1 - p_mu) + poisson_tau(1, mu, nu, p_mu, 1 - p_mu) <= 1


def _cfg(**kw):
    base = dict(mu=0.45, nu=0.1125, p_mu=0.84, q_z=0.9, N=1e10)
    base.update(kw)
    return IntensityConfig(**base)


def _random_counts(seed):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.3, 0.7)
    cfg = _cfg(mu=mu, nu=mu * rng.uniform(0.1, 0.5), p_mu=rng.uniform(0.6, 0.95),
               q_z=rng.uniform(0.5, 0.95), N=10 ** rng.uniform(9, 11))
    ch = ChannelModel(distance_km=rng.uniform(0, 60), e_mis=rng.uniform(0.005, 0.03))
    return synthesize_counts(expected_statistics(ch, cfg), cfg, seed), cfg


def test_zero_photon_d0_matches_oracle():
    ch = ChannelModel(distance_km=20)
    cfg = _cfg()
    counts = synthesize_counts(expected_statistics(ch, cfg), cfg, 1)
    ref = oracles.one_decoy(*_scope_args(counts, "z", (0, 1)), 0.45, 0.1125, 0.84, EPS)
    lo, up = zero_photon_bounds(counts, cfg, SEC, 0.0)
    assert lo == pytest.approx(ref["s0L"], rel=1e-9, abs=1e-9)
    assert up == pytest.approx(ref["s0U"], rel=1e-9)


def test_zero_photon_no_counts():
    lo, up = zero_photon_bounds(RawCounts.zeros(), _cfg(), SEC, 0.0)
    assert lo == 0.0 and up == 0.0


def test_reference_bounds_match_oracle(datasets):
    d = datasets[25]
    fl = d["flaws"]
    b = decoy_bounds(d["counts"], d["config"], d["security"], fl.d_mu_nu, fl.eta_bob_cal)
    kw = dict(mu=0.45, nu=0.1125, p_mu=0.84, eps=EPS, D=fl.d_mu_nu, eta=fl.eta_bob_cal)
    z = oracles.one_decoy(*_scope_args(d["counts"], "z", (0, 1)), N=d["counts"].N_sent("z"), **kw)
    assert b.s_z0L == pytest.approx(z["s0L"], rel=1e-9, abs=1e-6)
    assert b.s_z0U == pytest.approx(z["s0U"], rel=1e-9)
    assert b.s_z1L == pytest.approx(z["s1L"], rel=1e-9)
    assert b.s_z1L == pytest.approx(S_Z1L_25KM, rel=1e-12)
    for basis in "zx":
        for i in (0, 1):
            r = oracles.one_decoy(*_scope_args(d["counts"], basis, (i,)),
                                  N=d["counts"].N_sent(basis, i), **kw)
            pb = b.per_bit[f"{basis}{i}"]
            assert pb.s1L == pytest.approx(r["s1L"], rel=1e-9)
            assert pb.TU == pytest.approx(r["TU"], rel=1e-9, abs=1e-9)


def test_single_photon_d0_is_plain():
    counts, cfg = _random_counts(4)
    plain = single_photon_bounds(counts, cfg, SEC, 0.0, 0.3)
    ref = oracles.one_decoy(*_scope_args(counts, "z", (0, 1)), cfg.mu, cfg.nu, cfg.p_mu, EPS)
    assert plain == pytest.approx(ref["s1L"], rel=1e-9)
    # eta has no effect without the distinguishability term
    assert plain == single_photon_bounds(counts, cfg, SEC, 0.0, 1.0)


def test_decoy_ordering():
    with pytest.raises(DecoyError, match="decoy ordering"):
        _cfg(nu=0.45)


def test_single_photon_monotone_in_d(datasets):
    d = datasets[25]
    vals = [single_photon_bounds(d["counts"], d["config"], SEC, D, 0.085)
            for D in np.linspace(0, 5e-3, 12)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_error_count_zero():
    sec = SecurityParams(e0=0.0)
    counts = RawCounts.zeros()
    cells = dict(counts.cells, n_x0_mu=1000, n_x0_nu=200)
    c = RawCounts(cells, dict(counts.sent))
    assert error_count_upper(c, _cfg(), sec, 0.0, 1.0, "x", 0) == 0.0


def test_error_count_takes_minimum():
    counts, cfg = _random_counts(9)
    val, k = error_count_upper(counts, cfg, SEC, 0.0, 1.0, "x", 1, detail=True)
    assert val == max(min(k.values()), 0.0)


@pytest.mark.filterwarnings("ignore::imperfect_qkd._warn.ClampWarning")
def test_error_count_mu_branch_selected():
    # no decoy errors: K_mu_nu carries the larger 1/(mu - nu) weight and K_nu the 1/nu one
    counts = RawCounts.zeros()
    cells = dict(counts.cells, n_x0_mu=100000, m_x0_mu=10, n_x0_nu=20000, m_x0_nu=0)
    c = RawCounts(cells, dict(counts.sent))
    val, k = error_count_upper(c, _cfg(), SEC, 0.0, 1.0, "x", 0, s0L=0.0, detail=True)
    assert k["K_mu"] < k["K_nu"] and k["K_mu"] < k["K_mu_nu"]
    assert val == k["K_mu"]


def _bits(t_frac):
    return {f"{b}{i}": BitBounds(0.0, 1.0, 100.0 * (i + 1), t_frac * 100.0 * (i + 1))
            for b in "zx" for i in (0, 1)}


def test_bit_error_bounds_zero():
    assert single_photon_bit_error_bounds(_bits(0.0)) == (0.0, 0.0)


@pytest.mark.parametrize("frac", [0.25, 0.5])
def test_bit_error_bounds_ratio(frac):
    assert single_photon_bit_error_bounds(_bits(frac)) == pytest.approx((frac, frac))


def test_bit_error_bounds_clamped():
    with pytest.warns(ClampWarning):
        assert single_photon_bit_error_bounds(_bits(0.8)) == (0.5, 0.5)


def test_bit_error_bounds_no_statistics():
    pb = _bits(0.1)
    pb["x0"] = BitBounds(0, 0, 0.0, 0.0)
    pb["x1"] = BitBounds(0, 0, 0.0, 0.0)
    with pytest.raises(DecoyError, match="no single-photon statistics"):
        single_photon_bit_error_bounds(pb)


def test_penalty():
    ref = 6 * math.log2(19 / 1e-9) + math.log2(2 / 1e-15)
    assert SEC.penalty_bits == pytest.approx(ref, rel=1e-15)
    assert SEC.penalty_bits == pytest.approx(255.70, abs=0.01)


def test_key_length_half_phase_error(datasets):
    d = datasets[25]
    b = decoy_bounds(d["counts"], d["config"], SEC, 0.0)
    kl = key_length(b, 1.0, 0.5, d["counts"], SEC)
    assert kl.raw_bits == pytest.approx(b.s_z0L - kl.lambda_ec - SEC.penalty_bits, rel=1e-12)
    assert kl.l_bits == max(kl.raw_bits, 0.0)


def test_ec_leakage_pooled(datasets):
    c = datasets[25]["counts"]
    b = decoy_bounds(c, datasets[25]["config"], SEC, 0.0)
    kl = key_length(b, 1.0, 0.0, c, SEC)
    e = (1219469 + 114317) / (114908599 + 5359082)
    assert kl.e_z == pytest.approx(e, rel=1e-15)
    assert kl.lambda_ec == pytest.approx(1.16 * (114908599 + 5359082) * float(oracles.h2(e)),
                                         rel=1e-12)


def test_key_length_monotone(datasets):
    d = datasets[50]
    b = decoy_bounds(d["counts"], d["config"], SEC, 0.0)
    grid = np.linspace(0, 0.5, 21)
    ls = [key_length(b, 0.8, dp, d["counts"], SEC).raw_bits for dp in grid]
    assert all(y <= x for x, y in zip(ls, ls[1:]))
    ls = [key_length(b, p, 0.05, d["counts"], SEC).raw_bits for p in np.linspace(0, 1, 21)]
    assert all(y >= x for x, y in zip(ls, ls[1:]))


@pytest.mark.parametrize("p_succ,delta_p", [(1.2, 0.1), (0.5, 0.6), (-0.1, 0.1)])
def test_key_length_domain(datasets, p_succ, delta_p):
    d = datasets[25]
    b = decoy_bounds(d["counts"], d["config"], SEC, 0.0)
    with pytest.raises(DecoyError):
        key_length(b, p_succ, delta_p, d["counts"], SEC)


def test_asymptotic_rate_trivial():
    r = asymptotic_rate(0.01, 0.0, 0.05, 0.0, 0.7, 0.45)
    assert r == pytest.approx(0.7 * 0.45 * math.exp(-0.45) * 0.05, rel=1e-15)
    assert asymptotic_rate(0.01, 0.0, 0.05, 0.5, 0.7, 0.45) == 0.0


def test_asymptotic_rate_simulated_channel():
    st_ = expected_statistics(ChannelModel(distance_km=25), _cfg())
    r = asymptotic_rate(st_.Q_mu, st_.E_mu, st_.Y1, st_.e1, 1.0, 0.45)
    assert 0 < r < st_.Q_mu


@pytest.mark.parametrize("seed", range(50))
def test_oracle_equivalence(seed):
    counts, cfg = _random_counts(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = decoy_bounds(counts, cfg, SEC, 0.0)
        got = gllp_key_length(counts, cfg, SEC)
    args = (cfg.mu, cfg.nu, cfg.p_mu, EPS)
    z = oracles.one_decoy(*_scope_args(counts, "z", (0, 1)), *args)
    for key, val in (("s0L", b.s_z0L), ("s0U", b.s_z0U), ("s1L", b.s_z1L)):
        assert val == pytest.approx(z[key], rel=1e-9, abs=1e-9)
    for basis in "zx":
        for i in (0, 1):
            r = oracles.one_decoy(*_scope_args(counts, basis, (i,)), *args)
            pb = b.per_bit[f"{basis}{i}"]
            for key in ("s0L", "s0U", "s1L"):
                assert getattr(pb, key) == pytest.approx(r[key], rel=1e-9, abs=1e-9)
            assert pb.TU == pytest.approx(r["TU"], rel=1e-9, abs=1e-9)
    ref = oracles.plain_key_length(counts.cells, counts.sent, cfg.mu, cfg.nu, cfg.p_mu)
    assert got == pytest.approx(ref, rel=1e-9, abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_bounds_nonnegative_and_ordered(seed):
    counts, cfg = _random_counts(100 + seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = decoy_bounds(counts, cfg, SEC, 1.6e-3, 0.085)
    assert 0 <= b.s_z0L <= b.s_z0U and b.s_z1L >= 0
    for pb in b.per_bit.values():
        assert 0 <= pb.s0L <= pb.s0U and pb.s1L >= 0 and pb.TU >= 0
    assert 0 <= b.delta_b_z <= 0.5 and 0 <= b.delta_b_x <= 0.5


def test_bounds_round_trip(datasets):
    d = datasets[75]
    b = decoy_bounds(d["counts"], d["config"], SEC, 1.6e-3, 0.085)
    assert DecoyBounds.from_dict(b.to_dict()) == b


def test_counts_error_names_cell(datasets):
    d = datasets[25]["counts"].to_dict()
    d["m_x1_nu"] = d["n_x1_nu"] + 1
    with pytest.raises(CountsError, match="m_x1_nu"):
        RawCounts.from_dict(d)


def test_counts_aggregate_mismatch(datasets):
    d = datasets[25]["counts"].to_dict()
    d["n_z_mu"] += 1
    with pytest.raises(CountsError, match="n_z_mu"):
        RawCounts.from_dict(d)


def test_counts_missing_field(datasets):
    d = datasets[25]["counts"].to_dict()
    del d["N_x0x"]
    with pytest.raises(CountsError, match="N_x0x"):
        RawCounts.from_dict(d)
