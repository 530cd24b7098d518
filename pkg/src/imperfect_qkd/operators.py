"""Imperfection operator model.

Tensor ordering convention (used everywhere in this package)::

    coding (4)  (x)  side channel (4)  (x)  detection filter (2)

so a coding row ``r`` (1x4) combined with a side-channel diagonal ``g`` (4x4)
gives ``kron(r, g)`` of shape 4x16, the quadratic form ``kron(r, g)^T f kron(r, g)``
is 16x16, and tensoring with a 2x2 detection filter yields the 32x32
measurement operators consumed by :mod:`imperfect_qkd.eve_search`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from ._warn import ClampWarning

# Hadamard-type transform taking Z-pattern rows to X rows.
U = 0.5 * np.array([[1, 1, 1, 1],
                    [1, -1, 1, -1],
                    [1, 1, -1, -1],
                    [1, -1, -1, 1]], dtype=float)

STATES = ("z0", "z1", "x0", "x1")


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class FlawParameters:
    delta_z0: float = 0.0
    delta_z1: float = 0.0
    delta_x0: float = 0.0
    delta_x1: float = 0.0
    d_mu_nu: float = 0.0
    mu_out: float = 0.0
    F0: tuple = ((1.0, 0.0), (0.0, 1.0))
    F1: tuple = ((1.0, 0.0), (0.0, 1.0))
    eta_c: float = 1.0
    eta_bob: float = 1.0
    eta_d: float = 1.0

    def __post_init__(self):
        for name in ("delta_z0", "delta_z1", "delta_x0", "delta_x1"):
            v = getattr(self, name)
            if not 0.0 <= v <= math.pi / 2:
                raise OperatorError(f"{name}={v} outside [0, pi/2]")
        if not 0.0 <= self.d_mu_nu <= 1.0:
            raise OperatorError(f"D_mu_nu={self.d_mu_nu} outside [0, 1]")
        if self.mu_out < 0:
            raise OperatorError("mu_out must be nonnegative")
        for name in ("eta_c", "eta_bob", "eta_d"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise OperatorError(f"{name}={v} outside (0, 1]")
        for name in ("F0", "F1"):
            F = np.asarray(getattr(self, name), dtype=float)
            if F.shape != (2, 2):
                raise OperatorError(f"{name} must be 2x2")
            d = np.diag(F)
            if np.any(d <= 0) or np.any(d > 1) or np.any(F - np.diag(d)):
                raise OperatorError(f"{name} must be diagonal with entries in (0, 1]")
            object.__setattr__(self, name, tuple(map(tuple, F.tolist())))

    @property
    def deltas(self) -> dict:
        return {s: getattr(self, f"delta_{s}") for s in STATES}

    @property
    def eta_total(self) -> float:
        return self.eta_c * self.eta_bob * self.eta_d

    @property
    def eta_bob_cal(self) -> float:
        return self.eta_bob * self.eta_d

    def f0(self) -> np.ndarray:
        return np.array(self.F0)

    def f1(self) -> np.ndarray:
        return np.array(self.F1)

    def with_channel(self, eta_c: float) -> "FlawParameters":
        return replace(self, eta_c=eta_c)

    def is_ideal(self) -> bool:
        return (all(v == 0 for v in self.deltas.values()) and self.d_mu_nu == 0
                and self.mu_out == 0 and np.array_equal(self.f0(), np.eye(2))
                and np.array_equal(self.f1(), np.eye(2)))

    @classmethod
    def ideal(cls, eta_c: float = 1.0) -> "FlawParameters":
        return cls(eta_c=eta_c)

    def to_dict(self) -> dict:
        return {"delta_z0": self.delta_z0, "delta_z1": self.delta_z1,
                "delta_x0": self.delta_x0, "delta_x1": self.delta_x1,
                "D_mu_nu": self.d_mu_nu, "mu_out": self.mu_out,
                "F0": [list(r) for r in self.F0], "F1": [list(r) for r in self.F1],
                "eta_c": self.eta_c, "eta_bob": self.eta_bob, "eta_d": self.eta_d}

    @classmethod
    def from_dict(cls, d: dict) -> "FlawParameters":
        kw = {k: d[k] for k in ("delta_z0", "delta_z1", "delta_x0", "delta_x1") if k in d}
        if "D_mu_nu" in d:
            kw["d_mu_nu"] = d["D_mu_nu"]
        for k in ("mu_out", "eta_c", "eta_bob", "eta_d"):
            if k in d:
                kw[k] = d[k]
        for k in ("F0", "F1"):
            if k in d:
                F = np.asarray(d[k], dtype=float)
                kw[k] = np.diag(F) if F.ndim == 1 else F
        return cls(**kw)


def state_flaw_epsilon(delta: float, eta_c: float) -> float:
    """``sin(delta)**2 / eta_c``; values above one are clamped with a warning."""
    if eta_c <= 0:
        raise OperatorError("zero channel transmittance")
    if not 0.0 <= delta <= math.pi / 2:
        raise OperatorError(f"delta={delta} outside [0, pi/2]")
    eps = math.sin(delta) ** 2 / eta_c
    if eps > 1.0:
        warnings.warn(ClampWarning("epsilon", eps, 1.0,
                                   f"delta={delta:.6g}, eta_c={eta_c:.6g}"), stacklevel=2)
        eps = 1.0
    return eps


def _pattern_row(eps: float, bit: int, outcome: int) -> np.ndarray:
    a, b = math.sqrt(1.0 - eps), math.sqrt(eps)
    row = np.zeros(4)
    row[2 * outcome: 2 * outcome + 2] = (a, b) if bit == 0 else (b, a)
    return row


def coding_matrices(eps_z0: float, eps_z1: float, eps_x0: float, eps_x1: float) -> dict:
    """Coding-accuracy rows keyed ``("z"|"x", i, j)``, each of shape (4,)."""
    eps = {"z0": eps_z0, "z1": eps_z1, "x0": eps_x0, "x1": eps_x1}
    for k, v in eps.items():
        if not 0.0 <= v <= 1.0:
            raise OperatorError(f"epsilon_{k}={v} outside [0, 1]")
    rows = {}
    for i in (0, 1):
        for j in (0, 1):
            rows["z", i, j] = _pattern_row(eps[f"z{i}"], i, j)
            rows["x", i, j] = _pattern_row(eps[f"x{i}"], i, j) @ U
    return rows


def trojan_fidelity(mu_out: float, eta_total: float) -> np.ndarray:
    if eta_total <= 0 or eta_total > 1:
        raise OperatorError(f"eta_total={eta_total} outside (0, 1]")
    if mu_out < 0:
        raise OperatorError("mu_out must be nonnegative")
    a, b = math.exp(-4 * mu_out), math.exp(-2 * mu_out)
    f_th = np.array([[1, a, b, b],
                     [a, 1, b, b],
                     [b, b, 1, a],
                     [b, b, a, 1]], dtype=float)
    rad = 1.0 - (1.0 - f_th) / eta_total
    if np.any(rad < 0):
        worst = float(rad.min())
        warnings.warn(ClampWarning("trojan fidelity radicand", worst, 0.0, "fidelity exhausted"),
                      stacklevel=2)
        rad = np.clip(rad, 0.0, None)
    return np.sqrt(rad)


def side_channel_matrices(f: np.ndarray) -> dict:
    f = np.asarray(f, dtype=float)
    if f.shape != (4, 4):
        raise OperatorError("f must be 4x4")
    return {s: np.diag(f[k]) for k, s in enumerate(STATES)}


def _embed(row: np.ndarray, side: np.ndarray) -> np.ndarray:
    return np.kron(np.atleast_2d(row), side)


def virtual_operators(rows: dict, f: np.ndarray, f_z0: np.ndarray, f_z1: np.ndarray) -> dict:
    """``Z^p_ij`` for the virtual X measurement on Z-basis rounds (16x16 each)."""
    f = np.asarray(f, dtype=float)
    if f.shape != (4, 4) or f_z0.shape != (4, 4) or f_z1.shape != (4, 4):
        raise OperatorError(f"dimension mismatch: f {f.shape}, f_z0 {f_z0.shape}, f_z1 {f_z1.shape}")
    z = {(i, j): np.asarray(rows["z", i, j]) for i in (0, 1) for j in (0, 1)}
    for k, r in z.items():
        if r.shape != (4,):
            raise OperatorError(f"dimension mismatch: Z_{k} has shape {r.shape}")
    omega = {
        (0, 0): (z[0, 0] + z[0, 1], z[1, 0] + z[1, 1]),
        (0, 1): (z[0, 0] - z[0, 1], z[1, 0] - z[1, 1]),
        (1, 0): (z[0, 0] + z[0, 1], -z[1, 0] - z[1, 1]),
        (1, 1): (z[0, 0] - z[0, 1], -z[1, 0] + z[1, 1]),
    }
    out = {}
    for key, (o0, o1) in omega.items():
        V = _embed(o0, f_z0) + _embed(o1, f_z1)
        # (V0+V1)^T f (V0+V1) expands to the four cross terms.
        P = V.T @ f @ V
        out[key] = 0.5 * (P + P.T)
    return out


def dummy_filter(F0: np.ndarray, F1: np.ndarray) -> np.ndarray:
    """Dummy filter ``C`` with ``C^+C = F0^+ min(CF^-1, I) F0``.

    ``CF = F0 (F1^+ F1)^-1 F0^+`` is diagonalised as ``V D V^+`` and
    ``C = sqrt(min(1/D, 1)) V^+ F0``. For diagonal filters this gives
    ``C^+C = min(F0^+F0, F1^+F1)`` entrywise.
    """
    F0 = np.asarray(F0, dtype=float)
    F1 = np.asarray(F1, dtype=float)
    G1 = F1.conj().T @ F1
    if abs(np.linalg.det(G1)) < 1e-300 or np.linalg.cond(G1) > 1e14:
        raise OperatorError("degenerate detection filter: F1 is singular")
    CF = F0 @ np.linalg.inv(G1) @ F0.conj().T
    CF = 0.5 * (CF + CF.conj().T)
    D, V = np.linalg.eigh(CF)
    if np.any(D <= 0):
        raise OperatorError("degenerate detection filter: F0 is singular")
    return np.diag(np.sqrt(np.minimum(1.0 / D, 1.0))) @ V.conj().T @ F0


@dataclass(frozen=True)
class OperatorSet:
    rows: dict            # ("z"|"x", i, j) -> (4,)
    f: np.ndarray         # 4x4
    side: dict            # state -> 4x4 diagonal
    virtual: dict         # (i, j) -> 16x16
    FF: tuple             # (F0^+F0, F1^+F1)
    C: np.ndarray         # 2x2

    @property
    def CC(self) -> np.ndarray:
        return self.C.conj().T @ self.C

    def to_dict(self) -> dict:
        def m(a):
            return np.asarray(a).tolist()
        return {
            "ordering": "coding(4) x side(4) x detection(2)",
            "rows": {f"{b.upper()}_{i}{j}": m(r) for (b, i, j), r in self.rows.items()},
            "f": m(self.f),
            "side": {k: m(np.diag(v)) for k, v in self.side.items()},
            "virtual": {f"Z{i}{j}p": m(v) for (i, j), v in self.virtual.items()},
            "FF": [m(F) for F in self.FF],
            "C": m(self.C),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=lambda x: float(f"{x:.17g}"))

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorSet":
        rows = {}
        for k, v in d["rows"].items():
            rows[k[0].lower(), int(k[2]), int(k[3])] = np.array(v)
        side = {k: np.diag(v) for k, v in d["side"].items()}
        virt = {(int(k[1]), int(k[2])): np.array(v) for k, v in d["virtual"].items()}
        return cls(rows, np.array(d["f"]), side, virt,
                   tuple(np.array(F) for F in d["FF"]), np.array(d["C"]))


def build_operator_set(flaws: FlawParameters) -> OperatorSet:
    """Assemble every operator needed by the search for one channel transmittance.

    Raises :class:`OperatorError` when a state-flaw parameter exceeds one,
    since the security model is vacuous there.
    """
    eps = {}
    for s, d in flaws.deltas.items():
        raw = math.sin(d) ** 2 / flaws.eta_c
        if raw > 1.0:
            raise OperatorError(
                f"epsilon_{s}={raw:.4g} > 1 for delta_{s}={d:.6g}, eta_c={flaws.eta_c:.6g}")
        eps[s] = state_flaw_epsilon(d, flaws.eta_c)
    rows = coding_matrices(eps["z0"], eps["z1"], eps["x0"], eps["x1"])
    f = trojan_fidelity(flaws.mu_out, flaws.eta_total)
    side = side_channel_matrices(f)
    virt = virtual_operators(rows, f, side["z0"], side["z1"])
    F0, F1 = flaws.f0(), flaws.f1()
    FF = (F0.T @ F0, F1.T @ F1)
    return OperatorSet(rows, f, side, virt, FF, dummy_filter(F0, F1))
