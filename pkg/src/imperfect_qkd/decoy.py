"""One-decoy finite-key estimation.

Hoeffding-corrected counts, vacuum and single-photon lower bounds (with the
distinguishable-decoy correction), single-photon error-count upper bounds and
the final key-length formula.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

from ._warn import ClampWarning, DataWarning

BASES = ("z", "x")
INTENSITIES = ("mu", "nu")


class DecoyError(ValueError):
    pass


class CountsError(DecoyError):
    """Raised for count tables violating their invariants; names the cell."""


@dataclass(frozen=True)
class IntensityConfig:
    mu: float
    nu: float
    p_mu: float
    p_nu: float | None = None
    q_z: float = 0.9
    N: float = 1e10
    f_r: float = 50e6

    def __post_init__(self):
        if self.p_nu is None:
            object.__setattr__(self, "p_nu", 1.0 - self.p_mu)
        if not self.mu > self.nu > 0:
            raise DecoyError("decoy ordering: need mu > nu > 0")
        if not 0 < self.p_mu < 1 or abs(self.p_mu + self.p_nu - 1) > 1e-12:
            raise DecoyError("p_mu + p_nu must equal 1 with both in (0, 1)")
        if not 0 < self.q_z < 1:
            raise DecoyError("q_z must lie in (0, 1)")
        if self.N < 1:
            raise DecoyError("N must be at least 1")

    def p(self, k: str) -> float:
        return self.p_mu if k == "mu" else self.p_nu

    def intensity(self, k: str) -> float:
        return self.mu if k == "mu" else self.nu

    @property
    def duration_s(self) -> float:
        return self.N / self.f_r

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SecurityParams:
    eps_sec: float = 1e-9
    eps_cor: float = 1e-15
    eps_1: float | None = None
    eps_2: float | None = None
    f_ec: float = 1.16
    e0: float = 0.5

    def __post_init__(self):
        if self.eps_1 is None:
            object.__setattr__(self, "eps_1", self.eps_sec / 19)
        if self.eps_2 is None:
            object.__setattr__(self, "eps_2", self.eps_sec / 19)
        for name in ("eps_sec", "eps_cor", "eps_1", "eps_2"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise DecoyError(f"{name}={v} outside (0, 1)")
        if self.f_ec < 1:
            raise DecoyError("f_EC must be at least 1")
        if not 0 <= self.e0 <= 1:
            raise DecoyError("e0 outside [0, 1]")

    @property
    def penalty_bits(self) -> float:
        return 6 * math.log2(19 / self.eps_sec) + math.log2(2 / self.eps_cor)

    def to_dict(self) -> dict:
        return asdict(self)


def _cell(kind: str, basis: str, bit: int, k: str) -> str:
    return f"{kind}_{basis}{bit}_{k}"


@dataclass(frozen=True)
class RawCounts:
    """Detection (``n``) and error (``m``) counts per basis, bit and intensity.

    ``cells`` maps keys such as ``n_z0_mu`` or ``m_x1_nu`` to integers.
    ``sent`` holds the pulse totals ``N_zz``, ``N_z0z``, ``N_z1z``, ``N_xx``,
    ``N_x0x``, ``N_x1x``.
    """

    cells: dict
    sent: dict

    def __post_init__(self):
        for b in BASES:
            for i in (0, 1):
                for k in INTENSITIES:
                    for kind in "nm":
                        key = _cell(kind, b, i, k)
                        if key not in self.cells:
                            raise CountsError(f"missing field {key}")
                        v = self.cells[key]
                        if v < 0 or int(v) != v:
                            raise CountsError(f"{key}={v} is not a nonnegative integer")
                    n, m = self.cells[_cell("n", b, i, k)], self.cells[_cell("m", b, i, k)]
                    if m > n:
                        raise CountsError(f"{_cell('m', b, i, k)}={m} exceeds {_cell('n', b, i, k)}={n}")
        for key in ("N_zz", "N_z0z", "N_z1z", "N_xx", "N_x0x", "N_x1x"):
            if key not in self.sent:
                raise CountsError(f"missing field {key}")
            if self.sent[key] < 0:
                raise CountsError(f"{key} is negative")
        for b in BASES:
            tot, parts = self.sent[f"N_{b}{b}"], self.sent[f"N_{b}0{b}"] + self.sent[f"N_{b}1{b}"]
            if tot > 0 and abs(parts - tot) > 1e-3 * tot:
                warnings.warn(DataWarning(f"N_{b}0{b}+N_{b}1{b}={parts:.6g} differs from "
                                          f"N_{b}{b}={tot:.6g}"), stacklevel=3)

    def n(self, basis: str, k: str, bit: int | None = None) -> int:
        bits = (0, 1) if bit is None else (bit,)
        return sum(int(self.cells[_cell("n", basis, i, k)]) for i in bits)

    def m(self, basis: str, k: str, bit: int | None = None) -> int:
        bits = (0, 1) if bit is None else (bit,)
        return sum(int(self.cells[_cell("m", basis, i, k)]) for i in bits)

    def N_sent(self, basis: str, bit: int | None = None) -> float:
        if bit is None:
            return float(self.sent[f"N_{basis}{basis}"])
        return float(self.sent[f"N_{basis}{bit}{basis}"])

    def to_dict(self) -> dict:
        out = {k: int(v) for k, v in self.cells.items()}
        for b in BASES:
            for k in INTENSITIES:
                out[f"n_{b}_{k}"] = self.n(b, k)
                out[f"m_{b}_{k}"] = self.m(b, k)
        out.update({k: float(v) for k, v in self.sent.items()})
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RawCounts":
        cells, sent = {}, {}
        for b in BASES:
            for i in (0, 1):
                for k in INTENSITIES:
                    for kind in "nm":
                        key = _cell(kind, b, i, k)
                        if key not in d:
                            raise CountsError(f"missing field {key}")
                        cells[key] = d[key]
        for key in ("N_zz", "N_z0z", "N_z1z", "N_xx", "N_x0x", "N_x1x"):
            if key not in d:
                raise CountsError(f"missing field {key}")
            sent[key] = d[key]
        rc = cls(cells, sent)
        # Optional aggregate columns must agree with their parts exactly.
        for b in BASES:
            for k in INTENSITIES:
                for kind, fn in (("n", rc.n), ("m", rc.m)):
                    key = f"{kind}_{b}_{k}"
                    if key in d and int(d[key]) != fn(b, k):
                        raise CountsError(f"{key}={d[key]} does not equal the sum of its bits "
                                          f"({fn(b, k)})")
        return rc

    @classmethod
    def zeros(cls) -> "RawCounts":
        cells = {_cell(kind, b, i, k): 0 for kind in "nm" for b in BASES
                 for i in (0, 1) for k in INTENSITIES}
        sent = dict.fromkeys(("N_zz", "N_z0z", "N_z1z", "N_xx", "N_x0x", "N_x1x"), 0.0)
        return cls(cells, sent)


@dataclass
class BitBounds:
    s0L: float
    s0U: float
    s1L: float
    TU: float | None = None


@dataclass
class DecoyBounds:
    s_z0L: float
    s_z0U: float
    s_z1L: float
    per_bit: dict          # "z0","z1","x0","x1" -> BitBounds
    delta_b_z: float
    delta_b_x: float
    tau0: float
    tau1: float
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_bit"] = {k: asdict(v) for k, v in self.per_bit.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecoyBounds":
        d = dict(d)
        d["per_bit"] = {k: BitBounds(**v) for k, v in d["per_bit"].items()}
        return cls(**d)


def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise DecoyError(f"binary entropy argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return 0.0
    return float(-x * math.log2(x) - (1 - x) * math.log2(1 - x))


def hoeffding_width(total: float, eps: float) -> float:
    return math.sqrt(total / 2.0 * math.log(1.0 / eps))


def finite_key_correction(count: float, total: float, eps: float, k: float, p_k: float,
                          direction: str) -> float:
    """``(e^k / p_k) * (count +/- sqrt(total/2 * ln(1/eps)))``, floored at zero."""
    if p_k <= 0 or p_k > 1:
        raise DecoyError("p_k must lie in (0, 1]")
    if not 0 < eps < 1:
        raise DecoyError("eps must lie in (0, 1)")
    if count > total:
        raise DecoyError("count exceeds basis total")
    sign = {"+": 1.0, "-": -1.0}[direction]
    val = math.exp(k) / p_k * (count + sign * hoeffding_width(total, eps))
    if val < 0:
        warnings.warn(ClampWarning("corrected count", val, 0.0), stacklevel=2)
        val = 0.0
    return val


def poisson_tau(n: int, mu: float, nu: float, p_mu: float, p_nu: float) -> float:
    if n not in (0, 1):
        raise DecoyError("only n in {0, 1} is needed")
    return sum(p * math.exp(-k) * k ** n / math.factorial(n) for k, p in ((mu, p_mu), (nu, p_nu)))


@dataclass(frozen=True)
class _Scope:
    """Counts restricted to the whole Z basis or to one (basis, bit) cell."""

    n_mu: float
    n_nu: float
    m_mu: float
    m_nu: float
    N: float

    @classmethod
    def of(cls, counts: RawCounts, basis: str, bit: int | None) -> "_Scope":
        return cls(counts.n(basis, "mu", bit), counts.n(basis, "nu", bit),
                   counts.m(basis, "mu", bit), counts.m(basis, "nu", bit),
                   counts.N_sent(basis, bit))


def _corrected(sc: _Scope, cfg: IntensityConfig, sec: SecurityParams) -> dict:
    n_tot, m_tot = sc.n_mu + sc.n_nu, sc.m_mu + sc.m_nu
    c = {}
    for k, n, m in (("mu", sc.n_mu, sc.m_mu), ("nu", sc.n_nu, sc.m_nu)):
        kk, pk = cfg.intensity(k), cfg.p(k)
        for d in "+-":
            c[f"n_{k}{d}"] = finite_key_correction(n, n_tot, sec.eps_1, kk, pk, d)
            c[f"m_{k}{d}"] = finite_key_correction(m, m_tot, sec.eps_2, kk, pk, d)
    c["dn"] = hoeffding_width(n_tot, sec.eps_1)
    return c


def _check_order(cfg: IntensityConfig):
    if not cfg.mu > cfg.nu:
        raise DecoyError("decoy ordering: need mu > nu")


def _zero_photon(sc: _Scope, cfg, sec, d_mu_nu) -> tuple[float, float]:
    _check_order(cfg)
    c = _corrected(sc, cfg, sec)
    mu, nu = cfg.mu, cfg.nu
    base = mu * c["n_nu-"] - nu * c["n_mu+"]
    b1 = (base - 2 * sc.N * d_mu_nu * mu * (math.exp(nu) - 1)) / (mu - nu)
    b2 = (base - 2 * sc.N * d_mu_nu * nu * (math.exp(mu) - 1)) / (mu - nu)
    lower = max(b1, b2)
    if lower < 0:
        warnings.warn(ClampWarning("vacuum count", lower, 0.0), stacklevel=3)
        lower = 0.0
    upper = 2.0 * (c["m_nu+"] + c["dn"])
    return lower, upper


def _single_photon(sc: _Scope, cfg, sec, d_mu_nu, eta_bob_cal, s0U: float) -> float:
    _check_order(cfg)
    c = _corrected(sc, cfg, sec)
    mu, nu = cfg.mu, cfg.nu
    tau0 = poisson_tau(0, mu, nu, cfg.p_mu, cfg.p_nu)
    tau1 = poisson_tau(1, mu, nu, cfg.p_mu, cfg.p_nu)
    dterm = 2 * sc.N * d_mu_nu * (math.exp(nu) - math.exp(nu * (1 - eta_bob_cal)))
    val = tau1 * mu / (nu * (mu - nu)) * (
        c["n_nu-"] - nu ** 2 / mu ** 2 * c["n_mu+"]
        - (mu ** 2 - nu ** 2) / mu ** 2 * s0U / tau0 - dterm)
    if val < 0:
        warnings.warn(ClampWarning("single-photon count", val, 0.0), stacklevel=3)
        val = 0.0
    return val


def zero_photon_bounds(counts: RawCounts, config: IntensityConfig, security: SecurityParams,
                       d_mu_nu: float, eta_bob_cal: float = 1.0,
                       basis: str = "z", bit: int | None = None) -> tuple[float, float]:
    """Vacuum lower and upper bounds for the Z basis (or one basis/bit cell)."""
    return _zero_photon(_Scope.of(counts, basis, bit), config, security, d_mu_nu)


def single_photon_bounds(counts: RawCounts, config: IntensityConfig, security: SecurityParams,
                         d_mu_nu: float, eta_bob_cal: float, scope=("z", None),
                         s0U: float | None = None) -> float:
    """Single-photon lower bound for ``scope`` = ``("z", None)`` or ``(basis, bit)``.

    ``s0U`` defaults to the vacuum upper bound of the same scope.
    """
    basis, bit = scope
    sc = _Scope.of(counts, basis, bit)
    if s0U is None:
        s0U = _zero_photon(sc, config, security, d_mu_nu)[1]
    if s0U is None or not math.isfinite(s0U):
        raise DecoyError("missing vacuum bound")
    return _single_photon(sc, config, security, d_mu_nu, eta_bob_cal, s0U)


def error_count_upper(counts: RawCounts, config: IntensityConfig, security: SecurityParams,
                      d_mu_nu: float, eta_bob_cal: float, basis: str, bit: int,
                      s0L: float | None = None, detail: bool = False):
    """Upper bound on single-photon error counts: the least of three estimators."""
    sc = _Scope.of(counts, basis, bit)
    if s0L is None:
        s0L = _zero_photon(sc, config, security, d_mu_nu)[0]
    c = _corrected(sc, config, security)
    mu, nu, e0 = config.mu, config.nu, security.e0
    tau1 = poisson_tau(1, mu, nu, config.p_mu, config.p_nu)
    dterm = 2 * sc.N * d_mu_nu * (math.exp(nu) - math.exp(nu * (1 - eta_bob_cal)))
    k_mu = tau1 * (c["m_mu+"] - e0 * s0L) / mu
    k_nu = tau1 * (c["m_nu+"] - e0 * s0L + 2 * sc.N * nu * d_mu_nu * eta_bob_cal) / nu
    k_mn = tau1 * (c["m_mu+"] - c["m_nu-"] + dterm) / (mu - nu)
    val = max(min(k_mu, k_nu, k_mn), 0.0)
    if detail:
        return val, {"K_mu": k_mu, "K_nu": k_nu, "K_mu_nu": k_mn}
    return val


def single_photon_bit_error_bounds(per_bit: dict) -> tuple[float, float]:
    """Aggregate per-bit ``T^U`` and ``s^L`` into the two basis error-rate bounds."""
    out = []
    for b in BASES:
        num = per_bit[f"{b}0"].TU + per_bit[f"{b}1"].TU
        den = per_bit[f"{b}0"].s1L + per_bit[f"{b}1"].s1L
        if den <= 0:
            raise DecoyError(f"no single-photon statistics in the {b} basis")
        r = num / den
        if r > 0.5:
            warnings.warn(ClampWarning(f"delta_b_{b}", r, 0.5, "bit-error bound above 1/2"),
                          stacklevel=2)
            r = 0.5
        out.append(max(r, 0.0))
    return out[0], out[1]


def ec_leakage(counts: RawCounts, security: SecurityParams) -> tuple[float, float]:
    """``(lambda_EC, E_z)`` with ``E_z`` pooled over both intensities."""
    n_z = counts.n("z", "mu") + counts.n("z", "nu")
    m_z = counts.m("z", "mu") + counts.m("z", "nu")
    if n_z == 0:
        return 0.0, 0.0
    e_z = m_z / n_z
    return security.f_ec * n_z * binary_entropy(e_z), e_z


@dataclass
class KeyLength:
    l_bits: float
    raw_bits: float
    lambda_ec: float
    e_z: float
    penalty_bits: float


def key_length(bounds: DecoyBounds, p_succ: float, delta_p: float, counts: RawCounts,
               security: SecurityParams) -> KeyLength:
    if not 0 <= delta_p <= 0.5:
        raise DecoyError(f"delta_p={delta_p} outside [0, 1/2]")
    if not 0 <= p_succ <= 1:
        raise DecoyError(f"P_succ={p_succ} outside [0, 1]")
    lam, e_z = ec_leakage(counts, security)
    raw = (bounds.s_z0L + p_succ * bounds.s_z1L * (1 - binary_entropy(delta_p))
           - lam - security.penalty_bits)
    return KeyLength(max(raw, 0.0), raw, lam, e_z, security.penalty_bits)


def asymptotic_rate(Q_mu: float, E_mu: float, Y1: float, delta_p: float, p_succ: float,
                    mu: float, f_ec: float = 1.16) -> float:
    for name, v in (("Q_mu", Q_mu), ("E_mu", E_mu), ("Y1", Y1), ("P_succ", p_succ)):
        if not 0 <= v <= 1:
            raise DecoyError(f"{name}={v} outside [0, 1]")
    dp = min(delta_p, 0.5)
    em = min(E_mu, 0.5)
    r = p_succ * mu * math.exp(-mu) * Y1 * (1 - binary_entropy(dp)) - Q_mu * f_ec * binary_entropy(em)
    return max(r, 0.0)


def decoy_bounds(counts: RawCounts, config: IntensityConfig, security: SecurityParams,
                 d_mu_nu: float, eta_bob_cal: float = 1.0) -> DecoyBounds:
    """Full bound stack: Z-basis vacuum/single-photon bounds and per-bit error bounds.

    Clamps are recorded as warning dicts on the result as well as emitted.
    """
    _check_order(config)
    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        zsc = _Scope.of(counts, "z", None)
        s0L, s0U = _zero_photon(zsc, config, security, d_mu_nu)
        s1L = _single_photon(zsc, config, security, d_mu_nu, eta_bob_cal, s0U)
        per_bit = {}
        for b in BASES:
            for i in (0, 1):
                sc = _Scope.of(counts, b, i)
                bl, bu = _zero_photon(sc, config, security, d_mu_nu)
                s1 = _single_photon(sc, config, security, d_mu_nu, eta_bob_cal, bu)
                tu = error_count_upper(counts, config, security, d_mu_nu, eta_bob_cal, b, i, s0L=bl)
                per_bit[f"{b}{i}"] = BitBounds(bl, bu, s1, tu)
        if s1L == 0:
            notes.append({"quantity": "s_z1L", "raw": 0.0, "clamped": 0.0,
                          "note": "no single-photon statistics"})
        try:
            dbz, dbx = single_photon_bit_error_bounds(per_bit)
        except DecoyError as exc:
            notes.append({"quantity": "delta_b", "raw": float("nan"), "clamped": 0.5,
                          "note": str(exc)})
            dbz = dbx = 0.5
    for w in caught:
        if isinstance(w.message, ClampWarning):
            notes.append(w.message.as_dict())
        warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    tau0 = poisson_tau(0, config.mu, config.nu, config.p_mu, config.p_nu)
    tau1 = poisson_tau(1, config.mu, config.nu, config.p_mu, config.p_nu)
    return DecoyBounds(s0L, s0U, s1L, per_bit, dbz, dbx, tau0, tau1, notes)

