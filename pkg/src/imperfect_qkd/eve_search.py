"""Worst-case adversary search.

Eve's single-photon state is a complex unit vector ``xi`` in the 32-dimensional
space fixed by :mod:`imperfect_qkd.operators`. Every observable is a ratio of
two quadratic forms ``<xi|A|xi> / <xi|B|xi>``, so the search runs on the real
encoding ``x = [Re xi, Im xi]`` and is invariant to the scale of ``x``; the
unit-norm state is recovered by projection.

Two independent searches are run: one maximising the phase-error rate and one
minimising the success probability, each from many seeded random restarts
with a sequential-quadratic-programming solver. Constraints are ratio
inequalities (bit-error bounds) and optional ratio equalities (yield
consistency or explicit probability targets).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .operators import OperatorSet

FEAS_TOL = 1e-8
DEFAULT_RESTARTS = 64
DEFAULT_ITERATIONS = 2000
DEFAULT_SEED = 20240229
FAMILIES = ("zz", "xx", "vir")
PAIRS = ((0, 0), (0, 1), (1, 0), (1, 1))


class SearchError(ValueError):
    pass


class InfeasibleConstraintsError(SearchError):
    def __init__(self, violation: float, detail: str = ""):
        self.violation = float(violation)
        super().__init__(f"infeasible constraints (minimal violation {violation:.3g}){detail}")


@dataclass(frozen=True)
class ConstraintOperators:
    """Hermitian PSD measurement operators, one per (family, i, j)."""

    zz: dict
    xx: dict
    vir: dict

    @property
    def dim(self) -> int:
        return self.zz[0, 0].shape[0]

    def family(self, name: str) -> dict:
        return getattr(self, name)

    def total(self, name: str) -> np.ndarray:
        return sum(self.family(name).values())

    def errors(self, name: str) -> np.ndarray:
        fam = self.family(name)
        return fam[0, 1] + fam[1, 0]


def build_constraint_operators(ops: OperatorSet) -> ConstraintOperators:
    """Assemble the three operator families (32x32 each under our ordering)."""
    FF0, FF1 = ops.FF
    FF = {0: FF0, 1: FF1}
    zz, xx, vir = {}, {}, {}
    for (i, j) in PAIRS:
        for fam, basis, side in ((zz, "z", ops.side[f"z{i}"]), (xx, "x", ops.side[f"x{i}"])):
            A = np.kron(np.atleast_2d(ops.rows[basis, i, j]), side)
            if A.shape[1] != ops.f.shape[0] * side.shape[0] or A.shape[0] != ops.f.shape[0]:
                raise SearchError(f"dimension mismatch: row {ops.rows[basis, i, j].shape}, "
                                  f"side {side.shape}, f {ops.f.shape}")
            fam[i, j] = np.kron(A.T @ ops.f @ A, FF[j])
        vir[i, j] = 0.25 * np.kron(ops.virtual[i, j], ops.CC)
    dims = {M.shape for fam in (zz, xx, vir) for M in fam.values()}
    if len(dims) != 1:
        raise SearchError(f"dimension mismatch between operator families: {sorted(dims)}")
    sym = lambda M: 0.5 * (M + M.conj().T)  # noqa: E731
    return ConstraintOperators(*({k: sym(v) for k, v in fam.items()} for fam in (zz, xx, vir)))


def _rho(state) -> np.ndarray:
    xi = np.asarray(state, dtype=complex)
    if xi.ndim == 1:
        return np.outer(xi, xi.conj())
    return xi


def evaluate_probabilities(state, operators: ConstraintOperators) -> dict:
    """Twelve probabilities ``{(family, i, j): Tr[rho O]}``.

    ``state`` may be a state vector or a density matrix.
    """
    rho = _rho(state)
    out = {}
    for name in FAMILIES:
        for key, M in operators.family(name).items():
            out[(name, *key)] = float(max(np.real(np.trace(rho @ M)), 0.0))
    return out


def derived_rates(P: dict) -> dict:
    """Bit-error rates in both bases, phase-error rate and success probability."""
    tot = {f: sum(P[(f, *k)] for k in PAIRS) for f in FAMILIES}
    if min(tot.values()) <= 0:
        raise SearchError("degenerate state: a probability family vanishes")
    err = {f: P[(f, 0, 1)] + P[(f, 1, 0)] for f in FAMILIES}
    return {
        "delta_b_z": err["zz"] / tot["zz"],
        "delta_b_x": err["xx"] / tot["xx"],
        "delta_p": err["vir"] / tot["vir"],
        "p_succ": min(max(tot["vir"] / tot["zz"], 0.0), 1.0),
    }


@dataclass(frozen=True)
class ConstraintSet:
    """What Eve's state must reproduce.

    ``delta_b_z`` / ``delta_b_x`` are upper bounds on the single-photon bit-error
    rates. The optional equalities are

    * ``bit0_fraction_z`` / ``bit0_fraction_x``: share of single-photon
      detections carrying bit 0 in each basis;
    * ``basis_ratio``: ratio of X-basis to Z-basis single-photon yields;
    * ``targets``: explicit values of ``P[(family, i, j)] / sum P[zz]``
      (oracle mode).
    """

    delta_b_z: float
    delta_b_x: float
    bit0_fraction_z: float | None = None
    bit0_fraction_x: float | None = None
    basis_ratio: float | None = None
    targets: dict | None = None

    def __post_init__(self):
        for name in ("delta_b_z", "delta_b_x"):
            if getattr(self, name) > 0.5:
                raise SearchError(f"{name} above 1/2")
        for name in ("bit0_fraction_z", "bit0_fraction_x"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise SearchError(f"{name}={v} outside [0, 1]")
        if self.basis_ratio is not None and self.basis_ratio <= 0:
            raise SearchError("basis_ratio must be positive")

    @property
    def mode(self) -> str:
        if self.targets:
            return "equality"
        if self.bit0_fraction_z is not None or self.basis_ratio is not None:
            return "yield"
        return "bounds"

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "delta_b_z": self.delta_b_z, "delta_b_x": self.delta_b_x,
             "bit0_fraction_z": self.bit0_fraction_z, "bit0_fraction_x": self.bit0_fraction_x,
             "basis_ratio": self.basis_ratio}
        if self.targets:
            d["targets"] = {"%s_%d%d" % k: v for k, v in self.targets.items()}
        return d


@dataclass(frozen=True)
class _Ratio:
    name: str
    G: np.ndarray     # numerator - value * denominator
    B: np.ndarray     # denominator
    kind: str         # "le" or "eq"

    def value(self, x):
        return (x @ self.G @ x) / (x @ self.B @ x)

    def grad(self, x):
        g, b = x @ self.G @ x, x @ self.B @ x
        return 2 * (self.G @ x * b - g * (self.B @ x)) / b ** 2

    def violation(self, x) -> float:
        v = self.value(x)
        return max(v, 0.0) if self.kind == "le" else abs(v)


def _real(M: np.ndarray) -> np.ndarray:
    """Real symmetric encoding of a Hermitian operator acting on [Re, Im]."""
    R, I = np.real(M), np.imag(M)
    return np.block([[R, -I], [I, R]])


def _constraints(ops: ConstraintOperators, cs: ConstraintSet) -> list[_Ratio]:
    E = {f: _real(ops.errors(f)) for f in FAMILIES}
    T = {f: _real(ops.total(f)) for f in FAMILIES}
    out = [_Ratio("delta_b_z", E["zz"] - cs.delta_b_z * T["zz"], T["zz"], "le"),
           _Ratio("delta_b_x", E["xx"] - cs.delta_b_x * T["xx"], T["xx"], "le")]
    for basis, frac in (("zz", cs.bit0_fraction_z), ("xx", cs.bit0_fraction_x)):
        if frac is not None:
            fam = ops.family(basis)
            bit0 = _real(fam[0, 0] + fam[0, 1])
            out.append(_Ratio(f"bit0_{basis}", bit0 - frac * T[basis], T[basis], "eq"))
    if cs.basis_ratio is not None:
        out.append(_Ratio("basis_ratio", T["xx"] - cs.basis_ratio * T["zz"], T["zz"], "eq"))
    for (fam, i, j), v in (cs.targets or {}).items():
        M = _real(ops.family(fam)[i, j])
        out.append(_Ratio(f"P_{fam}_{i}{j}", M - v * T["zz"], T["zz"], "eq"))
    return out


@dataclass
class SearchResult:
    delta_p_max: float
    p_succ_min: float
    witness_delta_p: np.ndarray
    witness_p_succ: np.ndarray
    rates_at_delta_p: dict
    rates_at_p_succ: dict
    restarts: list = field(default_factory=list)
    seed: int = DEFAULT_SEED
    budget: tuple = (DEFAULT_RESTARTS, DEFAULT_ITERATIONS)
    tolerance: float = FEAS_TOL
    max_violation: float = 0.0

    @property
    def same_witness(self) -> bool:
        a, b = self.witness_delta_p, self.witness_p_succ
        return bool(abs(abs(np.vdot(a, b)) - 1.0) < 1e-9)

    def to_dict(self) -> dict:
        def vec(v):
            return {"re": np.real(v).tolist(), "im": np.imag(v).tolist()}
        return {
            "delta_p_max": self.delta_p_max, "p_succ_min": self.p_succ_min,
            "witness_delta_p": vec(self.witness_delta_p),
            "witness_p_succ": vec(self.witness_p_succ),
            "rates_at_delta_p": self.rates_at_delta_p, "rates_at_p_succ": self.rates_at_p_succ,
            "same_witness": self.same_witness, "restarts": self.restarts, "seed": self.seed,
            "budget": list(self.budget), "tolerance": self.tolerance,
            "max_violation": self.max_violation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchResult":
        def vec(v):
            return np.asarray(v["re"]) + 1j * np.asarray(v["im"])
        return cls(d["delta_p_max"], d["p_succ_min"], vec(d["witness_delta_p"]),
                   vec(d["witness_p_succ"]), d["rates_at_delta_p"], d["rates_at_p_succ"],
                   d["restarts"], d["seed"], tuple(d["budget"]), d["tolerance"],
                   d["max_violation"])


def _to_state(x: np.ndarray) -> np.ndarray:
    n = x.size // 2
    xi = x[:n] + 1j * x[n:]
    return xi / np.linalg.norm(xi)


def _objective(A: np.ndarray, B: np.ndarray, sign: float):
    def f(x):
        a, b = x @ A @ x, x @ B @ x
        return sign * a / b, sign * 2 * (A @ x * b - a * (B @ x)) / b ** 2
    return f


def _solve(fun, cons: list[_Ratio], x0: np.ndarray, iterations: int):
    scipy_cons = [{"type": "ineq" if c.kind == "le" else "eq",
                   "fun": (lambda x, c=c: -c.value(x)) if c.kind == "le" else c.value,
                   "jac": (lambda x, c=c: -c.grad(x)) if c.kind == "le" else c.grad}
                  for c in cons]
    # The unit-norm equality only fixes the scale, which every ratio ignores.
    scipy_cons.append({"type": "eq", "fun": lambda x: x @ x - 1.0, "jac": lambda x: 2 * x})
    sol = minimize(fun, x0, jac=True, constraints=scipy_cons, method="SLSQP",
                   options={"maxiter": iterations, "ftol": 1e-12})
    x = sol.x / np.linalg.norm(sol.x)
    return x, sol


def _repair(cons: list[_Ratio], x0: np.ndarray, iterations: int) -> np.ndarray:
    """Exact-penalty descent towards the feasible set (weight doubled on violation)."""
    x = x0
    w = 1.0
    for _ in range(20):
        def pen(x):
            val, grad = 0.0, np.zeros_like(x)
            for c in cons:
                v = c.value(x)
                if c.kind == "le" and v <= 0:
                    continue
                val += w * v * v
                grad += w * 2 * v * c.grad(x)
            return val, grad
        x = minimize(pen, x, jac=True, method="L-BFGS-B",
                     options={"maxiter": iterations}).x
        x /= np.linalg.norm(x)
        if max(c.violation(x) for c in cons) <= FEAS_TOL:
            break
        w *= 2.0
    return x


def _run(objective, cons, rngs, iterations, n2):
    rows, best = [], None
    for r, rng in enumerate(rngs):
        x0 = rng.standard_normal(n2)
        x0 /= np.linalg.norm(x0)
        x, sol = _solve(objective, cons, x0, iterations)
        viol = max((c.violation(x) for c in cons), default=0.0)
        if viol > FEAS_TOL:
            x, sol = _solve(objective, cons, _repair(cons, x0, iterations), iterations)
            viol = max((c.violation(x) for c in cons), default=0.0)
        val = float(objective(x)[0])
        feasible = viol <= FEAS_TOL
        rows.append({"restart": r, "objective": val, "feasible": feasible,
                     "converged": bool(sol.success), "iterations": int(sol.nit),
                     "violation": float(viol)})
        if feasible and (best is None or val < best[0]):
            best = (val, x, viol)
    return best, rows


def worst_case_search(operators: ConstraintOperators, constraints: ConstraintSet,
                      restarts: int = DEFAULT_RESTARTS, iterations: int = DEFAULT_ITERATIONS,
                      seed: int = DEFAULT_SEED) -> SearchResult:
    """Maximise the phase-error rate and minimise the success probability.

    Each restart draws its start from its own child of ``SeedSequence(seed)``,
    so results are reproducible and restarts are independent. Raises
    :class:`InfeasibleConstraintsError` if no restart yields a feasible state.
    """
    if restarts < 1 or iterations < 1:
        raise SearchError("budget must be positive")
    lows = [v for v in (constraints.delta_b_z, constraints.delta_b_x) if v < 0]
    if lows:
        raise InfeasibleConstraintsError(-min(lows), ": bit-error bound below zero")
    cons = _constraints(operators, constraints)
    n2 = 2 * operators.dim
    Ev, Tv = _real(operators.errors("vir")), _real(operators.total("vir"))
    Tz = _real(operators.total("zz"))
    children = np.random.SeedSequence(seed).spawn(2 * restarts)
    rngs = [np.random.default_rng(c) for c in children]

    best_dp, rows_dp = _run(_objective(Ev, Tv, -1.0), cons, rngs[:restarts], iterations, n2)
    best_ps, rows_ps = _run(_objective(Tv, Tz, 1.0), cons, rngs[restarts:], iterations, n2)
    if best_dp is None or best_ps is None:
        viol = min(r["violation"] for r in rows_dp + rows_ps)
        raise InfeasibleConstraintsError(viol)

    w_dp, w_ps = _to_state(best_dp[1]), _to_state(best_ps[1])
    r_dp = derived_rates(evaluate_probabilities(w_dp, operators))
    r_ps = derived_rates(evaluate_probabilities(w_ps, operators))
    table = ([dict(r, search="delta_p") for r in rows_dp]
             + [dict(r, search="p_succ") for r in rows_ps])
    return SearchResult(r_dp["delta_p"], r_ps["p_succ"], w_dp, w_ps, r_dp, r_ps, table,
                        seed, (restarts, iterations), FEAS_TOL, max(best_dp[2], best_ps[2]))


def is_feasible(state, operators: ConstraintOperators, constraints: ConstraintSet,
                tol: float = FEAS_TOL) -> bool:
    xi = np.asarray(state, dtype=complex)
    x = np.concatenate([xi.real, xi.imag])
    return all(c.violation(x) <= tol for c in _constraints(operators, constraints))


def sample_feasible_states(operators: ConstraintOperators, constraints: ConstraintSet,
                           count: int, seed: int = DEFAULT_SEED, around=(),
                           scales=(1e-3, 1e-2, 1e-1)) -> list[np.ndarray]:
    """Random feasible states for soundness checks.

    Each sample is a random point (either isotropic or a perturbation of one
    of the states in ``around``) moved to the nearest feasible point. Points
    that cannot be repaired are discarded, so fewer than ``count`` states may
    be returned.
    """
    cons = _constraints(operators, constraints)
    n2 = 2 * operators.dim
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    anchors = [np.concatenate([np.real(a), np.imag(a)]) for a in around]
    out = []
    for s in range(count):
        if anchors and s % 2:
            a = anchors[(s // 2) % len(anchors)]
            y = a + scales[s % len(scales)] * rng.standard_normal(n2)
        else:
            y = rng.standard_normal(n2)
        y /= np.linalg.norm(y)
        if all(c.violation(y) <= FEAS_TOL for c in cons):
            out.append(_to_state(y))
            continue
        x, _ = _solve(lambda x: (float((x - y) @ (x - y)), 2 * (x - y)), cons, y, 500)
        if all(c.violation(x) <= FEAS_TOL for c in cons):
            out.append(_to_state(x))
    return out


def exhaustive_search(operators: ConstraintOperators, constraints: ConstraintSet,
                      samples: int, seed: int = DEFAULT_SEED) -> tuple[float, float]:
    """Random-sampling oracle: extremes of the objectives over rejection samples."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    cons = _constraints(operators, constraints)
    n = operators.dim
    Ev, Tv = operators.errors("vir"), operators.total("vir")
    Tz = operators.total("zz")
    dp, ps = -np.inf, np.inf
    batch = 4096
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        X = rng.standard_normal((m, 2 * n))
        ok = np.ones(m, bool)
        for c in cons:
            v = np.einsum("ij,jk,ik->i", X, c.G, X) / np.einsum("ij,jk,ik->i", X, c.B, X)
            ok &= (v <= FEAS_TOL) if c.kind == "le" else (np.abs(v) <= FEAS_TOL)
        Z = X[ok, :n] + 1j * X[ok, n:]
        if len(Z):
            q = lambda M: np.real(np.einsum("ij,jk,ik->i", Z.conj(), M, Z))  # noqa: E731
            dp = max(dp, float(np.max(q(Ev) / q(Tv))))
            ps = min(ps, float(np.min(q(Tv) / q(Tz))))
        done += m
    return dp, ps
