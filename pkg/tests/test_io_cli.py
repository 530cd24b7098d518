import csv
import hashlib
import io as _io
import json
import subprocess
import sys

import pytest

from imperfect_qkd import cli, io
from imperfect_qkd.decoy import RawCounts
from imperfect_qkd.operators import FlawParameters
from imperfect_qkd.pipeline import AnalysisReport, run_pipeline
from imperfect_qkd.simulator import ChannelModel, expected_counts, gllp_key_length

# (n_z0, m_z0, n_z1, m_z1, n_x0, m_x0, n_x1, m_x1) per intensity, as tabulated
RAW = {
    25: {"mu": (55776166, 549127, 59132433, 670342, 635779, 7764, 641408, 5836),
         "nu": (3192913, 84869, 2166169, 29448, 33203, 825, 34917, 514),
         "N": (8.1529e9, 4.0764e9, 4.0764e9, 10.065e7, 5.0326e7, 5.0226e7)},
    50: {"mu": (13572261, 147390, 15000021, 133335, 137787, 1708, 169011, 2109),
         "nu": (1185426, 27400, 961101, 9283, 18647, 549, 11265, 177),
         "N": (8.1296e9, 4.0648e9, 4.0648e9, 10.036e7, 5.0182e7, 5.0182e7)},
    75: {"mu": (4576860, 54744, 3828257, 50017, 72260, 1310, 76612, 1600),
         "nu": (1078178, 17235, 965843, 17583, 13072, 458, 12381, 387),
         "N": (8.1390e9, 4.0695e9, 4.0695e9, 10.048e7, 5.0240e7, 5.0240e7)},
}

DIGESTS = {
    "counts_25km.json": "237d6f69361cbd027f2a94177495cb66f0776857cd42c2ed0f545762d77fe2bb",
    "counts_50km.json": "b9181b9d52237fe6deffba2defdc8a7c18b8ad1c027b77097b35af48c4a42e2f",
    "counts_75km.json": "5be129797475b61640ecd964c1e1a29c0bfd189f332161449383ce5cd9b3967c",
    "flaws.json": "9d59a78406b0b2f43d52e6fed9b3ac9de0eb2503a00286249f0910b1fe3023f9",
    "config_25km.json": "15ef66b7354f0d9a67864ccdf6bf687729b3e448fa4e1162326b916eee831da5",
    "config_50km.json": "579e020d3c606eb6c4e9f1a0e6c441138586da7fbc0a5dd22fbc2b5fbd2e6dc5",
    "config_75km.json": "647b2b588e739bbd9ac6987f7d7e10829bc8deed73f6316fa1896765da3e1986",
    "state_prep.json": "4ece5f6b4dd6b3d89d5645526cab575b6e95755e255569acf52bddcaa81c67b3",
    "efficiency_scan.csv": "65f29bc453a052d635f5377a52cb91ad56f35da79f6acf9c742dcab1ff3cc11f",
    "trace_signal.csv": "32ba56e040c0e96fc67f3588ce3652faef1c0c2e9c205cd56d9abd61176aa149",
    "trace_decoy.csv": "3fac0e383887cdc5f5f08d82f198489914b89e0131e4a1d89fb03d0abba2a78b",
}


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("name", sorted(DIGESTS))
def test_fixture_digest(name):
    assert hashlib.sha256((io.FIXTURES / name).read_bytes()).hexdigest() == DIGESTS[name]


@pytest.mark.parametrize("km", [25, 50, 75])
def test_fixture_counts_match_table(km):
    rc = io.load_counts(io.FIXTURES / f"counts_{km}km.json")
    for k in ("mu", "nu"):
        got = tuple(rc.cells[f"{kind}_{b}{i}_{k}"] for b in "zx" for i in (0, 1) for kind in "nm")
        assert got == RAW[km][k]
    sent = tuple(rc.sent[key] for key in ("N_zz", "N_z0z", "N_z1z", "N_xx", "N_x0x", "N_x1x"))
    assert sent == pytest.approx(RAW[km]["N"], rel=1e-12)


def test_fixture_flaws_match_table():
    fl = io.load_flaws(io.FIXTURES / "flaws.json")
    assert (fl.delta_z0, fl.delta_z1, fl.delta_x0, fl.delta_x1) == (0.0, 0.0891, 0.0726, 0.0285)
    assert fl.d_mu_nu == 1.6e-3 and fl.mu_out == 3.6e-10
    assert fl.F0 == ((1.0, 0.0), (0.0, 0.8137)) and fl.F1 == ((0.5791, 0.0), (0.0, 1.0))


def test_load_counts_fixture():
    assert io.load_counts(io.FIXTURES / "counts_25km.json").cells["n_z0_mu"] == 55776166


def test_load_zero_counts(tmp_path):
    p = tmp_path / "zero.json"
    p.write_text(json.dumps(RawCounts.zeros().to_dict()))
    rc = io.load_counts(p)
    assert rc == RawCounts.zeros()


def test_load_counts_rejects_error_above_detections(tmp_path):
    d = json.loads((io.FIXTURES / "counts_25km.json").read_text())
    d["m_z0_mu"] = d["n_z0_mu"] + 1
    d["m_z_mu"] += d["n_z0_mu"] + 1 - 549127
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    with pytest.raises(io.SchemaError, match="m_z0_mu"):
        io.load_counts(p)


def test_load_counts_missing_field(tmp_path):
    d = json.loads((io.FIXTURES / "counts_25km.json").read_text())
    del d["n_x1_nu"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    with pytest.raises(io.SchemaError, match="n_x1_nu"):
        io.load_counts(p)


def test_schema_type_error(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"mu": "high", "nu": 0.1, "p_mu": 0.8, "N": 1e9}))
    with pytest.raises(io.SchemaError, match="mu"):
        io.load_config(p)


def test_pipeline_zero_counts(datasets):
    d = datasets[25]
    rep = run_pipeline(RawCounts.zeros(), d["flaws"], d["config"], d["security"])
    assert rep.key.l_bits == 0.0
    assert rep.search is None
    assert any("no statistics" in w["note"] for w in rep.warnings)


def test_pipeline_ideal_matches_baseline():
    ch = ChannelModel(distance_km=20)
    cfg = io.load_config(io.FIXTURES / "config_25km.json")[0]
    counts = expected_counts(ch, cfg)
    rep = run_pipeline(counts, FlawParameters.ideal(ch.eta_c), cfg, io.load_security())
    ref = gllp_key_length(counts, cfg, io.load_security())
    assert ref > 0
    assert rep.key.l_bits == pytest.approx(ref, rel=1e-6)


def test_pipeline_deterministic(datasets, reference_reports):
    d = datasets[25]
    again = run_pipeline(d["counts"], d["flaws"], d["config"], d["security"])
    assert again.to_dict() == reference_reports[25].to_dict()


def test_pipeline_stage_label(datasets):
    d = datasets[25]
    fl = d["flaws"].with_channel(1e-4)
    with pytest.raises(ValueError) as info:
        run_pipeline(d["counts"], fl, d["config"], d["security"], restarts=2)
    assert info.value.stage == "operators"
    assert str(info.value).startswith("[operators]")


def test_report_round_trip(tmp_path, reference_reports):
    rep = reference_reports[50]
    p = tmp_path / "r.json"
    text = io.emit(rep, "json", p)
    back = io.load_report(p)
    assert isinstance(back, AnalysisReport)
    assert back.to_dict() == json.loads(text)
    assert io.emit(back, "json") == text


def test_emit_bit_stable(reference_reports):
    assert io.emit(reference_reports[25], "json") == io.emit(reference_reports[25], "json")


def test_clamped_quantities_have_warnings(reference_reports):
    for rep in reference_reports.values():
        assert rep.bounds.s_z0L == 0.0
        hits = [w for w in rep.warnings if w.get("quantity") == "vacuum count"]
        assert hits and all(w["raw"] < 0 and w["clamped"] == 0.0 for w in hits)


def test_csv_three_rows(datasets, reference_reports):
    reps = [reference_reports[km] for km in (25, 50, 75)]
    text = io.emit(reps, "csv", extras=[datasets[km]["extra"] for km in (25, 50, 75)])
    rows = list(csv.DictReader(_io.StringIO(text)))
    assert len(rows) == 3
    assert tuple(rows[0]) == io.SUMMARY_COLUMNS
    assert [float(r["distance_km"]) for r in rows] == [25, 50, 75]
    assert float(rows[0]["l_bps"]) == reference_reports[25].key.l_bps


def test_plot_csv():
    rows = [{"distance_km": 0.0, "rate_refined": 1e-3, "rate_gllp": 2e-3},
            {"distance_km": 10.0, "rate_refined": 5e-4, "rate_gllp": 1e-3}]
    text = io.emit(rows, "plot-csv")
    assert text.splitlines()[0] == "distance_km,rate_refined,rate_gllp"
    assert len(text.splitlines()) == 3


def test_emit_unwritable(tmp_path, reference_reports):
    with pytest.raises(OSError):
        io.emit(reference_reports[25], "json", tmp_path / "missing" / "r.json")


def test_cli_calibrate(capsys):
    code, out, _ = _run(capsys, "calibrate")
    assert code == 0
    d = json.loads(out)
    assert d["F0"][1][1] == pytest.approx(0.8137, abs=5e-5)


def test_cli_bounds_and_search(capsys):
    code, out, _ = _run(capsys, "bounds", "--paper", "75")
    assert code == 0 and json.loads(out)["s_z1L"] > 0
    code, out, _ = _run(capsys, "search", "--paper", "25", "--restarts", "2", "--iterations", "300")
    assert code == 0
    assert 0 <= json.loads(out)["result"]["p_succ_min"] <= 1


def test_cli_keyrate_csv(capsys, tmp_path):
    out = tmp_path / "k.csv"
    code, _, _ = _run(capsys, "keyrate", "--paper", "25", "--restarts", "4", "--format", "csv",
                      "--out", str(out))
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1 and float(rows[0]["l_bits"]) > 0


def test_cli_keyrate_files_match_reference_flag(capsys):
    f = io.FIXTURES
    a = _run(capsys, "keyrate", "--paper", "50", "--restarts", "3")
    b = _run(capsys, "keyrate", "--counts", str(f / "counts_50km.json"),
             "--config", str(f / "config_50km.json"), "--flaws", str(f / "flaws.json"),
             "--security", str(f / "security.json"), "--restarts", "3")
    assert a[0] == b[0] == 0
    assert json.loads(a[1])["key"] == json.loads(b[1])["key"]


def test_cli_schema_error_exit_2(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"n_z0_mu": -1}))
    code, _, err = _run(capsys, "bounds", "--paper", "25", "--counts", str(p))
    assert code == 2 and "error" in err


def test_cli_missing_inputs_exit_2(capsys):
    code, _, err = _run(capsys, "bounds")
    assert code == 2 and "missing inputs" in err


def test_cli_infeasible_exit_3(capsys, tmp_path):
    d = json.loads((io.FIXTURES / "counts_25km.json").read_text())
    for k in d:
        if k.startswith("m_"):
            d[k] = 0
    p = tmp_path / "clean.json"
    p.write_text(json.dumps(d))
    code, _, err = _run(capsys, "search", "--paper", "25", "--counts", str(p),
                        "--restarts", "2", "--iterations", "300")
    assert code == 3 and "infeasible constraints" in err


def test_cli_simulate(capsys):
    code, out, _ = _run(capsys, "simulate", "--distance", "25", "--synthesize", "--seed", "3")
    assert code == 0
    d = json.loads(out)
    assert set(d) >= {"statistics", "expected_counts", "synthetic_counts"}
    code2, out2, _ = _run(capsys, "simulate", "--distance", "25", "--synthesize", "--seed", "3")
    assert out2 == out


def test_cli_sweep_plot_csv(capsys):
    code, out, _ = _run(capsys, "sweep", "--start", "0", "--stop", "60", "--points", "3",
                        "--restarts", "2", "--format", "plot-csv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "distance_km,rate_refined,rate_gllp" and len(lines) == 4


def test_cli_optimize(capsys):
    code, out, _ = _run(capsys, "optimize", "--paper", "25", "--method", "gllp")
    assert code == 0
    assert json.loads(out)["best"]["mu"] == 0.45


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "imperfect_qkd.cli", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("calibrate", "bounds", "search", "keyrate", "simulate", "optimize", "sweep"):
        assert sub in r.stdout
