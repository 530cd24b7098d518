"""End-to-end analysis: decoy bounds, operator model, worst-case search, key length."""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

from . import __version__
from ._warn import ClampWarning
from .decoy import (DecoyBounds, IntensityConfig, RawCounts, SecurityParams, decoy_bounds,
                    key_length)
from .eve_search import (DEFAULT_ITERATIONS, DEFAULT_RESTARTS, DEFAULT_SEED,
                         ConstraintSet, SearchResult, build_constraint_operators,
                         worst_case_search)
from .operators import FlawParameters, build_operator_set

MODES = ("yield", "bounds", "equality")


def _staged(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        exc.stage = stage
        if exc.args and isinstance(exc.args[0], str) and not exc.args[0].startswith("["):
            exc.args = (f"[{stage}] {exc.args[0]}",) + exc.args[1:]
        raise


@dataclass
class KeyRateResult:
    l_bits: float
    l_bps: float
    rate_per_pulse: float
    p_succ: float
    delta_p: float
    E_mu: float
    E_z: float
    lambda_ec: float
    penalty_bits: float
    raw_bits: float
    pairings: dict = field(default_factory=dict)


@dataclass
class AnalysisReport:
    inputs: dict
    bounds: DecoyBounds
    constraints: dict | None
    search: SearchResult | None
    key: KeyRateResult
    warnings: list
    version: str = __version__
    seed: int = DEFAULT_SEED

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs,
            "bounds": self.bounds.to_dict(),
            "constraints": self.constraints,
            "search": None if self.search is None else self.search.to_dict(),
            "key": asdict(self.key),
            "warnings": self.warnings,
            "version": self.version,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisReport":
        return cls(d["inputs"], DecoyBounds.from_dict(d["bounds"]), d["constraints"],
                   None if d["search"] is None else SearchResult.from_dict(d["search"]),
                   KeyRateResult(**d["key"]), d["warnings"], d["version"], d["seed"])


def counts_digest(counts: RawCounts) -> str:
    blob = json.dumps(counts.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def default_constraints(bounds: DecoyBounds, counts: RawCounts, mode: str = "yield",
                        targets: dict | None = None) -> ConstraintSet:
    """Constraint set for ``mode``.

    ``bounds`` uses only the bit-error upper bounds. ``yield`` also pins the
    bit-0 share of single-photon detections in each basis to the observed
    signal-intensity share and takes the single-photon yield as basis
    independent. ``equality`` adds explicit probability targets.
    """
    if mode not in MODES:
        raise ValueError(f"unknown constraint mode {mode!r}")
    kw = {}
    if mode == "yield":
        for b in ("z", "x"):
            tot = counts.n(b, "mu")
            kw[f"bit0_fraction_{b}"] = counts.n(b, "mu", 0) / tot if tot else None
        kw["basis_ratio"] = 1.0
    if mode == "equality":
        if not targets:
            raise ValueError("equality mode needs probability targets")
        kw["targets"] = targets
    return ConstraintSet(bounds.delta_b_z, bounds.delta_b_x, **kw)


def run_pipeline(counts: RawCounts, flaws: FlawParameters, config: IntensityConfig,
                 security: SecurityParams, restarts: int = DEFAULT_RESTARTS,
                 iterations: int = DEFAULT_ITERATIONS, seed: int | None = None,
                 mode: str = "yield", targets: dict | None = None) -> AnalysisReport:
    """Decoy bounds, then the operator model, then both searches, then the key length.

    ``flaws.eta_c`` must already hold the channel transmittance of ``counts``.
    Errors are re-raised with a ``stage`` attribute naming where they occurred.
    """
    seed = DEFAULT_SEED if seed is None else seed
    notes = []
    inputs = {"config": config.to_dict(), "flaws": flaws.to_dict(),
              "security": security.to_dict(), "counts_sha256": counts_digest(counts),
              "mode": mode, "budget": [restarts, iterations]}

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        bounds = _staged("bounds", decoy_bounds, counts, config, security, flaws.d_mu_nu,
                         flaws.eta_bob_cal)
    notes.extend(bounds.warnings)
    notes.extend({"quantity": "data", "note": str(w.message)} for w in caught
                 if not isinstance(w.message, ClampWarning))

    pb = bounds.per_bit
    per_bit_ok = all(pb[f"{b}0"].s1L + pb[f"{b}1"].s1L > 0 for b in ("z", "x"))
    search = constraints = None
    if bounds.s_z1L <= 0 or not per_bit_ok:
        notes.append({"quantity": "search", "note": "no statistics: search skipped, l = 0"})
        p_succ, delta_p = 0.0, 0.5
    else:
        ops = _staged("operators", build_operator_set, flaws)
        cops = _staged("operators", build_constraint_operators, ops)
        cs = _staged("constraints", default_constraints, bounds, counts, mode, targets)
        constraints = cs.to_dict()
        search = _staged("search", worst_case_search, cops, cs, restarts, iterations, seed)
        p_succ, delta_p = search.p_succ_min, search.delta_p_max
        if delta_p > 0.5:
            notes.append(ClampWarning("delta_p", delta_p, 0.5, "phase error above 1/2").as_dict())
            delta_p = 0.5

    kl = key_length(bounds, p_succ, delta_p, counts, security)
    if kl.raw_bits < 0:
        notes.append(ClampWarning("l", kl.raw_bits, 0.0, "negative key length").as_dict())
    pairings = {}
    if search is not None:
        # Key length for each witness on its own, next to the conservative mix.
        for name, rates in (("witness_delta_p", search.rates_at_delta_p),
                            ("witness_p_succ", search.rates_at_p_succ)):
            k = key_length(bounds, rates["p_succ"], min(rates["delta_p"], 0.5), counts, security)
            pairings[name] = {"p_succ": rates["p_succ"], "delta_p": rates["delta_p"],
                              "l_bits": k.l_bits}
    key = KeyRateResult(
        l_bits=kl.l_bits, l_bps=kl.l_bits / config.duration_s,
        rate_per_pulse=kl.l_bits / config.N, p_succ=p_succ, delta_p=delta_p,
        E_mu=kl.e_z, E_z=kl.e_z, lambda_ec=kl.lambda_ec,
        penalty_bits=kl.penalty_bits, raw_bits=kl.raw_bits, pairings=pairings)
    notes = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in n.items()}
             for n in notes]
    return AnalysisReport(inputs, bounds, constraints, search, key, notes, __version__, seed)
