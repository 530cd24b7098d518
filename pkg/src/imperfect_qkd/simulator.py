"""Forward link model, synthetic counts, GLLP baseline and parameter search.

Link model (threshold detectors, two per basis)::

    eta      = 10**(-loss_dB/10) * eta_bob * eta_d
    Y0       = 2 * p_dc
    Q_k      = 1 - (1 - Y0) * exp(-eta * k)
    E_k Q_k  = e0 * Y0 + (e_mis - e0 * Y0) * (1 - exp(-eta * k))
    Y1       = 1 - (1 - Y0) * (1 - eta)

Alice and Bob pick the Z basis with probability ``q_z`` each; only matched
bases are counted, so ``N_bb = N * q_b**2`` and each bit value carries half.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .decoy import (BASES, INTENSITIES, DecoyError, IntensityConfig, RawCounts, SecurityParams,
                    decoy_bounds, key_length)
from .operators import FlawParameters, OperatorError
from ._warn import DataWarning


@dataclass(frozen=True)
class ChannelModel:
    distance_km: float = 0.0
    loss_db: float | None = None
    loss_per_km: float = 0.2
    e_mis: float = 0.01
    p_dc: float = 1e-6
    eta_d: float = 0.085
    eta_bob: float = 1.0
    e0: float = 0.5

    def __post_init__(self):
        if self.total_loss_db < 0:
            raise ValueError("loss must be nonnegative")
        if not 0 <= self.e_mis <= 0.5:
            raise ValueError("e_mis outside [0, 1/2]")
        if not 0 <= self.p_dc < 1:
            raise ValueError("p_dc outside [0, 1)")
        if not 0 < self.eta_d <= 1 or not 0 < self.eta_bob <= 1:
            raise ValueError("efficiencies must lie in (0, 1]")

    @property
    def total_loss_db(self) -> float:
        return self.loss_db if self.loss_db is not None else self.loss_per_km * self.distance_km

    @property
    def eta_c(self) -> float:
        return 10.0 ** (-self.total_loss_db / 10.0)

    @property
    def eta(self) -> float:
        return self.eta_c * self.eta_bob * self.eta_d

    def at(self, distance_km: float) -> "ChannelModel":
        return ChannelModel(distance_km, None, self.loss_per_km, self.e_mis, self.p_dc,
                            self.eta_d, self.eta_bob, self.e0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChannelStatistics:
    Q_mu: float
    Q_nu: float
    E_mu: float
    E_nu: float
    Y1: float
    e1: float
    counts: dict = field(default_factory=dict)   # expected cell values for a given N

    def gain(self, k: str) -> float:
        return self.Q_mu if k == "mu" else self.Q_nu

    def qber(self, k: str) -> float:
        return self.E_mu if k == "mu" else self.E_nu


def _gain_qber(ch: ChannelModel, k: float) -> tuple[float, float]:
    y0 = 2 * ch.p_dc
    t = 1 - math.exp(-ch.eta * k)
    Q = 1 - (1 - y0) * math.exp(-ch.eta * k)
    EQ = ch.e0 * y0 + (ch.e_mis - ch.e0 * y0) * t
    return Q, (EQ / Q if Q > 0 else ch.e0)


def _cell_fraction(config: IntensityConfig, basis: str, k: str) -> float:
    qb = config.q_z if basis == "z" else 1 - config.q_z
    return qb * qb * 0.5 * config.p(k)


def expected_statistics(channel: ChannelModel, config: IntensityConfig,
                        N: float | None = None) -> ChannelStatistics:
    N = config.N if N is None else N
    Qm, Em = _gain_qber(channel, config.mu)
    Qn, En = _gain_qber(channel, config.nu)
    y0 = 2 * channel.p_dc
    Y1 = 1 - (1 - y0) * (1 - channel.eta)
    e1 = (channel.e0 * y0 + (channel.e_mis - channel.e0 * y0) * channel.eta) / Y1
    counts = {}
    for b in BASES:
        for i in (0, 1):
            for k, Q, E in (("mu", Qm, Em), ("nu", Qn, En)):
                sent = N * _cell_fraction(config, b, k)
                counts[f"n_{b}{i}_{k}"] = sent * Q
                counts[f"m_{b}{i}_{k}"] = sent * Q * E
        qb = config.q_z if b == "z" else 1 - config.q_z
        counts[f"N_{b}{b}"] = N * qb * qb
        counts[f"N_{b}0{b}"] = counts[f"N_{b}1{b}"] = N * qb * qb / 2
    return ChannelStatistics(Qm, Qn, Em, En, Y1, e1, counts)


def expected_counts(channel: ChannelModel, config: IntensityConfig) -> RawCounts:
    """Noiseless counts: expectations rounded to the nearest integer."""
    c = expected_statistics(channel, config).counts
    cells = {k: int(round(v)) for k, v in c.items() if k[0] in "nm"}
    sent = {k: v for k, v in c.items() if k[0] == "N"}
    return RawCounts(cells, sent)


def synthesize_counts(stats: ChannelStatistics, config: IntensityConfig, seed: int,
                      N: float | None = None) -> RawCounts:
    """Sample a count table: multinomial pulse allocation, then binomial detections and errors."""
    N = int(config.N if N is None else N)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    keys = [(b, i, k) for b in BASES for i in (0, 1) for k in INTENSITIES]
    probs = [_cell_fraction(config, b, k) for b, _, k in keys]
    alloc = rng.multinomial(N, probs + [1 - sum(probs)])[:-1]
    cells, sent = {}, dict.fromkeys(("N_zz", "N_z0z", "N_z1z", "N_xx", "N_x0x", "N_x1x"), 0.0)
    for (b, i, k), n_sent in zip(keys, alloc):
        n = int(rng.binomial(n_sent, stats.gain(k)))
        cells[f"n_{b}{i}_{k}"] = n
        cells[f"m_{b}{i}_{k}"] = int(rng.binomial(n, stats.qber(k)))
        sent[f"N_{b}{b}"] += float(n_sent)
        sent[f"N_{b}{i}{b}"] += float(n_sent)
    return RawCounts(cells, sent)


def gllp_key_length(counts: RawCounts, config: IntensityConfig,
                    security: SecurityParams) -> float:
    """Key length (bits) with no device imperfections: P_succ=1, delta_p = delta_b^x."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = decoy_bounds(counts, config, security, 0.0)
    return key_length(b, 1.0, min(b.delta_b_x, 0.5), counts, security).l_bits


def gllp_baseline(channel: ChannelModel, config: IntensityConfig,
                  security: SecurityParams) -> float:
    """Baseline key length per pulse on the noiseless expected counts."""
    return gllp_key_length(expected_counts(channel, config), config, security) / config.N


def refined_rate(channel: ChannelModel, config: IntensityConfig, flaws: FlawParameters,
                 security: SecurityParams, restarts: int = 16, seed: int | None = None) -> float:
    """Imperfection-aware key length per pulse on the noiseless expected counts.

    Returns 0 when the flaw model is vacuous at this channel transmittance.
    """
    from .pipeline import run_pipeline
    counts = expected_counts(channel, config)
    fl = FlawParameters.from_dict({**flaws.to_dict(), "eta_bob": channel.eta_bob,
                                   "eta_d": channel.eta_d})
    try:
        rep = run_pipeline(counts, fl.with_channel(channel.eta_c), config, security,
                           restarts=restarts, seed=seed)
    except (OperatorError, DecoyError) as exc:
        warnings.warn(DataWarning(f"refined rate set to 0 at {channel.distance_km} km: {exc}"),
                      stacklevel=2)
        return 0.0
    return rep.key.l_bits / config.N


@dataclass
class GridResult:
    best: dict | None
    table: list
    zero_rate: bool


def optimize_protocol_params(channel: ChannelModel, flaws: FlawParameters | None, N: float,
                             grid: dict, security: SecurityParams | None = None,
                             method: str = "refined", restarts: int = 8,
                             f_r: float = 50e6) -> GridResult:
    """Exhaustive grid search over ``mu``, ``nu``, ``p_mu`` and ``q_z``.

    ``method`` is ``"refined"`` (imperfection-aware, needs ``flaws``) or
    ``"gllp"``. Points with ``nu >= mu`` are skipped.
    """
    security = security or SecurityParams()
    axes = [list(grid.get(k, d)) for k, d in
            (("mu", [0.45]), ("nu", [0.1]), ("p_mu", [0.8]), ("q_z", [0.9]))]
    if not all(axes):
        raise ValueError("empty grid axis")
    table, best = [], None
    for mu, nu, p_mu, q_z in itertools.product(*axes):
        if not nu < mu:
            continue
        cfg = IntensityConfig(mu, nu, p_mu, 1 - p_mu, q_z, N, f_r)
        if method == "gllp":
            rate = gllp_baseline(channel, cfg, security)
        else:
            rate = refined_rate(channel, cfg, flaws, security, restarts)
        row = {"mu": mu, "nu": nu, "p_mu": p_mu, "q_z": q_z, "rate": rate, "l_bits": rate * N}
        table.append(row)
        if best is None or rate > best["rate"]:
            best = row
    zero = best is None or best["rate"] <= 0
    return GridResult(best, table, zero)


def sweep(channel: ChannelModel, config: IntensityConfig, flaws: FlawParameters,
          distances, security: SecurityParams | None = None, restarts: int = 16) -> list[dict]:
    """Rows ``distance_km, rate_refined, rate_gllp`` (key bits per pulse)."""
    security = security or SecurityParams()
    rows = []
    for d in distances:
        ch = channel.at(float(d))
        rows.append({"distance_km": float(d),
                     "rate_refined": refined_rate(ch, config, flaws, security, restarts),
                     "rate_gllp": gllp_baseline(ch, config, security)})
    return rows
