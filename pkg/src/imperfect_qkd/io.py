"""Loading, validation, bundled fixtures and report emission."""

from __future__ import annotations

import csv
import io as _io
import json
from importlib.resources import files
from pathlib import Path

import jsonschema
import numpy as np

from .calibration import DetectorEfficiencyScan, PulseTrace, StatePrepCounts, TrojanMeasurement
from .decoy import CountsError, IntensityConfig, RawCounts, SecurityParams
from .operators import FlawParameters
from .pipeline import AnalysisReport
from .simulator import ChannelModel

FIXTURES = files("imperfect_qkd") / "fixtures" / "paper"
SCHEMAS = files("imperfect_qkd") / "schemas"
PAPER_DISTANCES = (25, 50, 75)
SUMMARY_COLUMNS = ("distance_km", "loss_db", "N", "mu", "nu", "p_mu", "p_nu", "p_succ",
                   "delta_p", "E_mu", "l_bps", "l_bits")
PLOT_COLUMNS = ("distance_km", "rate_refined", "rate_gllp")


class SchemaError(ValueError):
    pass


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text() if not hasattr(path, "read_text")
                      else path.read_text())


def validate(data: dict, schema: str) -> dict:
    sch = json.loads((SCHEMAS / f"{schema}.v1.json").read_text())
    try:
        jsonschema.validate(data, sch)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise SchemaError(f"{schema}: {where}: {exc.message}") from None
    return data


def load_counts(path) -> RawCounts:
    d = validate(_read_json(path), "counts")
    try:
        return RawCounts.from_dict(d)
    except CountsError as exc:
        raise SchemaError(f"counts: {exc}") from None


def load_config(path) -> tuple[IntensityConfig, dict]:
    """Intensity config plus extras (``distance_km``, ``loss_db``) if present."""
    d = validate(_read_json(path), "config")
    keys = ("mu", "nu", "p_mu", "p_nu", "q_z", "N", "f_r")
    cfg = IntensityConfig(**{k: d[k] for k in keys if k in d})
    return cfg, {k: v for k, v in d.items() if k not in keys}


def load_flaws(path, loss_db: float | None = None) -> FlawParameters:
    fl = FlawParameters.from_dict(validate(_read_json(path), "flaws"))
    if loss_db is not None:
        fl = fl.with_channel(10.0 ** (-loss_db / 10.0))
    return fl


def load_security(path=None) -> SecurityParams:
    if path is None:
        return SecurityParams()
    return SecurityParams(**validate(_read_json(path), "security"))


def load_channel(path) -> ChannelModel:
    return ChannelModel(**validate(_read_json(path), "channel"))


def load_grid(path) -> dict:
    return validate(_read_json(path), "grid")


def load_state_prep(path) -> StatePrepCounts:
    return StatePrepCounts.from_dict(validate(_read_json(path), "state_prep"))


def load_trojan(path) -> TrojanMeasurement:
    return TrojanMeasurement(**validate(_read_json(path), "trojan"))


def _read_csv(path, columns: tuple) -> np.ndarray:
    text = path.read_text() if hasattr(path, "read_text") else Path(path).read_text()
    reader = csv.reader(_io.StringIO(text))
    header = [h.strip() for h in next(reader)]
    if tuple(header) != columns:
        raise SchemaError(f"expected header {','.join(columns)}, got {','.join(header)}")
    return np.array([[float(v) for v in row] for row in reader if row], dtype=float)


def load_trace(path, label: str = "signal") -> PulseTrace:
    a = _read_csv(path, ("t_ps", "rho"))
    return PulseTrace(a[:, 0], a[:, 1], label)


def load_scan(path, t1: float = -300.0, t2: float = 375.0, q_z: float = 0.9):
    a = _read_csv(path, ("shift_ps", "eta_H", "eta_V", "eta_P", "eta_M"))
    eta = {"H": a[:, 1], "V": a[:, 2], "P": a[:, 3], "M": a[:, 4]}
    return DetectorEfficiencyScan(a[:, 0], eta, t1, t2, q_z)


def paper_dataset(km: int) -> dict:
    """Bundled inputs for one distance of the experiment."""
    if km not in PAPER_DISTANCES:
        raise ValueError(f"no bundled data for {km} km")
    cfg, extra = load_config(FIXTURES / f"config_{km}km.json")
    return {
        "counts": load_counts(FIXTURES / f"counts_{km}km.json"),
        "config": cfg,
        "extra": extra,
        "flaws": load_flaws(FIXTURES / "flaws.json", extra["loss_db"]),
        "security": load_security(FIXTURES / "security.json"),
    }


def paper_calibration_inputs() -> dict:
    return {
        "prep": load_state_prep(FIXTURES / "state_prep.json"),
        "signal": load_trace(FIXTURES / "trace_signal.csv", "signal"),
        "decoy": load_trace(FIXTURES / "trace_decoy.csv", "decoy"),
        "trojan": load_trojan(FIXTURES / "trojan.json"),
        "scan": load_scan(FIXTURES / "efficiency_scan.csv"),
    }


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, shortest round-trip floats)."""
    return json.dumps(obj, sort_keys=True, indent=2, default=_default)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def summary_row(report: AnalysisReport, extra: dict | None = None) -> dict:
    cfg = report.inputs["config"]
    extra = extra or {}
    return {
        "distance_km": extra.get("distance_km", ""), "loss_db": extra.get("loss_db", ""),
        "N": cfg["N"], "mu": cfg["mu"], "nu": cfg["nu"], "p_mu": cfg["p_mu"],
        "p_nu": cfg["p_nu"], "p_succ": report.key.p_succ, "delta_p": report.key.delta_p,
        "E_mu": report.key.E_mu, "l_bps": report.key.l_bps, "l_bits": report.key.l_bits,
    }


def _csv(rows: list[dict], columns: tuple) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()
                    if k in columns})
    return buf.getvalue()


def emit(obj, fmt: str = "json", path=None, extras=None) -> str:
    """Serialise a report (``json``), report summaries (``csv``) or sweep rows (``plot-csv``).

    Returns the text and writes it to ``path`` when given.
    """
    if fmt == "json":
        text = dumps(obj.to_dict() if hasattr(obj, "to_dict") else obj) + "\n"
    elif fmt == "csv":
        reports = obj if isinstance(obj, (list, tuple)) else [obj]
        extras = extras or [None] * len(reports)
        text = _csv([summary_row(r, e) for r, e in zip(reports, extras)], SUMMARY_COLUMNS)
    elif fmt == "plot-csv":
        text = _csv(list(obj), PLOT_COLUMNS)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def load_report(path) -> AnalysisReport:
    return AnalysisReport.from_dict(_read_json(path))
