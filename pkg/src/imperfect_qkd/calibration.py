"""Device characterisation -> flaw parameters.

Turns raw measurements (state-preparation detector counts, time-domain pulse
histograms, Trojan-horse back-reflection data and detector efficiency scans)
into the scalar and matrix flaw parameters used by :mod:`imperfect_qkd.operators`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._warn import ClampWarning

STATE_ANGLES = {"z0": 0.0, "x0": math.pi / 2, "z1": math.pi, "x1": 3 * math.pi / 2}
DEFAULT_CALIBRATION_EPSILON = 1e-10


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class StatePrepRecord:
    state: str
    theta: float
    d1: int
    d2: int


@dataclass(frozen=True)
class StatePrepCounts:
    """Z-basis detector counts recorded while scanning the four BB84 states.

    ``epsilon`` is the failure probability of the count intervals; ``None``
    switches the fluctuation terms off.
    """

    records: tuple[StatePrepRecord, ...]
    eta_d1: float
    eta_d2: float
    epsilon: float | None = DEFAULT_CALIBRATION_EPSILON

    def __post_init__(self):
        thetas = [r.theta for r in self.records]
        if len(set(thetas)) != len(thetas):
            raise CalibrationError("duplicate target phases")
        for r in self.records:
            if r.d1 < 0 or r.d2 < 0:
                raise CalibrationError(f"negative counts for state {r.state}")
        for eta in (self.eta_d1, self.eta_d2):
            if not 0 < eta <= 1:
                raise CalibrationError(f"detector efficiency {eta} outside (0, 1]")
        if self.epsilon is not None and not 0 < self.epsilon < 1:
            raise CalibrationError(f"epsilon {self.epsilon} outside (0, 1)")

    def record(self, state: str) -> StatePrepRecord:
        for r in self.records:
            if r.state == state:
                return r
        raise CalibrationError(f"no counts for state {state!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "StatePrepCounts":
        recs = tuple(
            StatePrepRecord(r["state"], float(r["theta"]), int(r["d1"]), int(r["d2"]))
            for r in d["records"]
        )
        return cls(recs, float(d["eta_d1"]), float(d["eta_d2"]),
                   d.get("epsilon", DEFAULT_CALIBRATION_EPSILON))


@dataclass(frozen=True)
class PulseTrace:
    t_ps: np.ndarray
    rho: np.ndarray
    label: str = "signal"

    def __post_init__(self):
        t = np.asarray(self.t_ps, dtype=float)
        r = np.asarray(self.rho, dtype=float)
        if t.shape != r.shape or t.ndim != 1:
            raise CalibrationError("time bins and masses must be 1-D and equal length")
        if np.any(np.diff(t) <= 0):
            raise CalibrationError("time bins must be strictly increasing")
        if np.any(r < 0):
            raise CalibrationError("negative probability mass")
        object.__setattr__(self, "t_ps", t)
        object.__setattr__(self, "rho", r)

    def normalized(self) -> np.ndarray:
        total = self.rho.sum()
        if total <= 0:
            raise CalibrationError(f"trace {self.label!r} has no mass")
        return self.rho / total


@dataclass(frozen=True)
class TrojanMeasurement:
    n_leak: float           # counts/s
    eta_eve: float          # monitor detector efficiency
    mu_eve: float           # probe photons/s
    mu_eve_max: float = 1e20
    isolation_db: float = 0.0
    f_r: float = 50e6


@dataclass(frozen=True)
class DetectorEfficiencyScan:
    """Efficiencies of detectors H, V, P, M versus arrival-time shift."""

    shift_ps: np.ndarray
    eta: dict = field(default_factory=dict)   # "H","V","P","M" -> array
    t1: float = -300.0
    t2: float = 375.0
    q_z: float = 0.9

    def __post_init__(self):
        s = np.asarray(self.shift_ps, dtype=float)
        object.__setattr__(self, "shift_ps", s)
        eta = {k: np.asarray(self.eta[k], dtype=float) for k in "HVPM"}
        object.__setattr__(self, "eta", eta)
        for k, v in eta.items():
            if v.shape != s.shape:
                raise CalibrationError(f"efficiency column {k} has wrong length")
            if np.any(v < 0) or np.any(v > 1):
                raise CalibrationError(f"efficiency column {k} outside [0, 1]")
        if self.t1 == self.t2:
            raise CalibrationError("attack times t1 and t2 must differ")
        for t in (self.t1, self.t2):
            if not s.min() <= t <= s.max():
                raise CalibrationError(f"attack time {t} ps outside scan range")
        if not 0 < self.q_z < 1:
            raise CalibrationError("q_z must lie in (0, 1)")

    def at(self, detector: str, t: float) -> float:
        return float(np.interp(t, self.shift_ps, self.eta[detector]))


def _interval(count: float, epsilon: float | None, sign: int) -> float:
    # Width as used for the modulation-error table: sqrt(D / (2 ln(1/eps))).
    if epsilon is None:
        return float(count)
    return count + sign * math.sqrt(count / (2.0 * math.log(1.0 / epsilon)))


def modulation_error_bound(counts: StatePrepCounts, state: str,
                           epsilon: float | None = ...) -> float:
    """Bound on the phase-modulation error of ``state`` in radians.

    Detector 1 counts at the reference phase (state ``z0``) are subtracted as
    background from both detectors. The resulting efficiency-corrected ratio
    fixes the prepared angle up to the reflection ``a -> 2*pi - a``; the image
    closer to the target phase is compared against it.
    """
    if state == "z0":
        raise CalibrationError("reference state: z0 defines the phase origin")
    eps = counts.epsilon if epsilon is ... else epsilon
    ref = counts.record("z0")
    rec = counts.record(state)

    num = (_interval(rec.d1, eps, +1) - _interval(ref.d1, eps, -1)) / counts.eta_d1
    den = (_interval(rec.d2, eps, -1) - _interval(ref.d1, eps, +1)) / counts.eta_d2
    if den <= 0 or num < 0:
        raise CalibrationError(f"insufficient counts for state {state!r}")

    a = 2.0 * math.atan(math.sqrt(num / den))
    theta = rec.theta
    delta = 0.5 * min(abs(theta - a), abs(theta - (2 * math.pi - a)))
    return min(max(delta, 0.0), math.pi / 2)


def modulation_errors(counts: StatePrepCounts) -> dict[str, float]:
    out = {"z0": 0.0}
    for r in counts.records:
        if r.state != "z0":
            out[r.state] = modulation_error_bound(counts, r.state)
    return out


def decoy_distinguishability(signal: PulseTrace, decoy: PulseTrace) -> float:
    """Trace distance between the normalised time profiles of two intensities."""
    if signal.t_ps.shape != decoy.t_ps.shape or not np.allclose(signal.t_ps, decoy.t_ps):
        raise CalibrationError("incompatible traces: bin grids differ")
    p, q = signal.normalized(), decoy.normalized()
    return float(0.5 * np.abs(p - q).sum())


def trojan_mu_out(m: TrojanMeasurement) -> tuple[float, float]:
    """Return ``(R_a, mu_out)``: transmitter reflectivity and leaked photons/pulse."""
    if m.eta_eve <= 0 or m.f_r <= 0 or m.mu_eve <= 0:
        raise CalibrationError("invalid measurement: eta_eve, mu_eve and f_r must be positive")
    if m.n_leak < 0 or m.isolation_db < 0 or m.mu_eve_max < 0:
        raise CalibrationError("invalid measurement: negative leak, isolation or probe power")
    r_a = m.n_leak / (m.eta_eve * m.mu_eve)
    mu_out = r_a * m.mu_eve_max * 10.0 ** (-m.isolation_db / 10.0) / m.f_r
    return r_a, mu_out


def _ratio_filter(num: float, den: float, name: str, favoured_slot: int) -> np.ndarray:
    """diag filter with 1 on ``favoured_slot`` and num/den on the other slot.

    A ratio above one means the detector favours the other bit, so the
    inverted ratio is moved onto the favoured slot instead.
    """
    if den <= 0 or num <= 0:
        raise CalibrationError(f"degenerate scan: zero efficiency in {name}")
    r = num / den
    d = np.ones(2)
    other = 1 - favoured_slot
    if r <= 1:
        d[other] = r
    else:
        warnings.warn(ClampWarning(name, r, 1.0 / r,
                                   "ratio above one inverted onto the other slot"), stacklevel=3)
        d[favoured_slot] = 1.0 / r
    return np.diag(d)


def detection_mismatch_matrices(scan: DetectorEfficiencyScan) -> tuple[np.ndarray, np.ndarray]:
    """Filters ``(F0, F1)`` seen by bit 0 / bit 1 under a two-time shift attack."""
    t1, t2 = scan.t1, scan.t2
    Fz0 = _ratio_filter(scan.at("H", t2), scan.at("V", t2), "F_z0", 0)
    Fz1 = _ratio_filter(scan.at("V", t1), scan.at("H", t1), "F_z1", 1)
    Fx0 = _ratio_filter(scan.at("P", t2), scan.at("M", t2), "F_x0", 0)
    Fx1 = _ratio_filter(scan.at("M", t1), scan.at("P", t1), "F_x1", 1)
    q = scan.q_z
    return q * Fz0 + (1 - q) * Fx0, q * Fz1 + (1 - q) * Fx1


def optimal_attack_times(scan: DetectorEfficiencyScan) -> tuple[float, float]:
    """Grid pair (t1, t2) giving the most lopsided filters.

    Scores each ordered pair by the summed min-entropy of the normalised
    diagonals of ``F_j^+ F_j`` and returns the minimiser.
    """
    best, arg = math.inf, (scan.t1, scan.t2)
    grid = scan.shift_ps
    for t1 in grid:
        for t2 in grid:
            if t1 == t2:
                continue
            trial = DetectorEfficiencyScan(scan.shift_ps, scan.eta, float(t1), float(t2), scan.q_z)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ClampWarning)
                    F0, F1 = detection_mismatch_matrices(trial)
            except CalibrationError:
                continue
            score = 0.0
            for F in (F0, F1):
                p = np.diag(F) ** 2
                score += -math.log2(p.max() / p.sum())
            if score < best:
                best, arg = score, (float(t1), float(t2))
    return arg


@dataclass(frozen=True)
class CalibrationResult:
    deltas: dict
    d_mu_nu: float
    r_a: float
    mu_out: float
    F0: np.ndarray
    F1: np.ndarray

    def to_dict(self) -> dict:
        return {
            "delta_z0": self.deltas["z0"], "delta_z1": self.deltas["z1"],
            "delta_x0": self.deltas["x0"], "delta_x1": self.deltas["x1"],
            "D_mu_nu": self.d_mu_nu, "mu_out": self.mu_out, "R_a": self.r_a,
            "F0": self.F0.tolist(), "F1": self.F1.tolist(),
        }


def calibrate(prep: StatePrepCounts, signal: PulseTrace, decoy: PulseTrace,
              trojan: TrojanMeasurement, scan: DetectorEfficiencyScan) -> CalibrationResult:
    deltas = modulation_errors(prep)
    r_a, mu_out = trojan_mu_out(trojan)
    F0, F1 = detection_mismatch_matrices(scan)
    return CalibrationResult(deltas, decoy_distinguishability(signal, decoy), r_a, mu_out, F0, F1)
