import csv
import json

import numpy as np
import pytest

from eceth.cli import main
from eceth.data import Dataset, write_csv
from eceth.simbench import generate_rct


@pytest.fixture
def rct_csv(tmp_path):
    path = tmp_path / "rct.csv"
    write_csv(generate_rct(500, 0.3, 1, seed=3), path)
    return path


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _strip_time(text):
    d = json.loads(text)
    d.pop("generated_at")
    return d


def test_evaluate_report_contents(rct_csv, tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _, err = _run(capsys, "evaluate", "--input", rct_csv, "--known-pi", "0.5", "--score", "ipw",
                        "--bootstrap", "30", "--epsilon", "0.01", "--epsilon", "0.5", "--seed", "4", "--out", out)
    assert code == 0, err
    r = json.loads(out.read_text())
    assert r["schema_version"] == 1 and r["n"] == 500
    assert r["bins"] == {"requested": "auto", "resolved": 20, "strategy": "freq"}
    assert set(r["theta"]) == {"plugin", "robust"}
    assert r["theta"]["robust"]["truncated"] == max(r["theta"]["robust"]["raw"], 0.0)
    assert r["bootstrap"]["B"] == 30 and len(r["bootstrap"]["ci"]) == 2
    assert [t["epsilon"] for t in r["tests"]] == [0.01, 0.5]
    assert len(r["calibration"]) == 20
    assert r["config"]["seed"] == 4 and r["config"]["known_pi"] == 0.5
    assert r["score_kind"] == "ipw-known"


def test_calibrated_predictions_score_near_zero(tmp_path, capsys):
    path = tmp_path / "cal.csv"
    write_csv(generate_rct(20_000, 0.0, 0, seed=5), path)
    code, text, err = _run(capsys, "evaluate", "--input", path, "--known-pi", "0.5", "--score", "ipw",
                           "--bootstrap", "40", "--seed", "1")
    assert code == 0, err
    r = json.loads(text)
    lo, hi = r["bootstrap"]["ci"]
    assert lo <= 0.0 <= hi
    assert abs(r["theta"]["robust"]["raw"]) < 0.02


def test_report_rerun_from_embedded_config(rct_csv, tmp_path, capsys):
    first = tmp_path / "a.json"
    code, _, err = _run(capsys, "evaluate", "--input", rct_csv, "--outcome-model", "ridge", "--bootstrap", "5",
                        "--epsilon", "0.05", "--bins", "7", "--seed", "11", "--out", first)
    assert code == 0, err
    second = tmp_path / "b.json"
    code, _, err = _run(capsys, "evaluate", "--config", first, "--out", second)
    assert code == 0, err
    assert _strip_time(first.read_text()) == _strip_time(second.read_text())
    a = [ln for ln in first.read_text().splitlines() if "generated_at" not in ln]
    b = [ln for ln in second.read_text().splitlines() if "generated_at" not in ln]
    assert a == b


def test_flags_override_config(rct_csv, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"input": str(rct_csv), "score": "ipw", "known_pi": 0.5, "bins": 5,
                               "bootstrap": 0}))
    code, text, err = _run(capsys, "evaluate", "--config", cfg, "--bins", "8")
    assert code == 0, err
    r = json.loads(text)
    assert r["bins"]["resolved"] == 8 and r["bootstrap"] is None and r["score_kind"] == "ipw-known"


def test_seed_from_environment(rct_csv, capsys, monkeypatch):
    monkeypatch.setenv("ECETH_SEED", "123")
    code, text, _ = _run(capsys, "evaluate", "--input", rct_csv, "--score", "ipw", "--bootstrap", "0")
    assert code == 0 and json.loads(text)["config"]["seed"] == 123
    code, text, _ = _run(capsys, "evaluate", "--input", rct_csv, "--score", "ipw", "--bootstrap", "0", "--seed", "7")
    assert json.loads(text)["config"]["seed"] == 7


def test_missing_prediction_column_names_the_flag(tmp_path, capsys):
    path = tmp_path / "nodelta.csv"
    path.write_text("y,w,x\n1,0,2\n2,1,3\n")
    code, _, err = _run(capsys, "evaluate", "--input", path)
    assert code == 2
    assert "--prediction-col" in err


def test_bad_values_exit_2(rct_csv, tmp_path, capsys):
    assert _run(capsys, "evaluate", "--input", rct_csv, "--bins", "zero")[0] == 2
    assert _run(capsys, "evaluate", "--input", rct_csv, "--level", "1.5")[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"binz": 3}')
    assert _run(capsys, "evaluate", "--config", bad, "--input", rct_csv)[0] == 2
    assert _run(capsys, "evaluate", "--input", tmp_path / "absent.csv")[0] == 2


def test_estimation_failure_exit_3(tmp_path, capsys):
    path = tmp_path / "treated.csv"
    rng = np.random.default_rng(0)
    write_csv(Dataset(rng.standard_normal((30, 1)), np.ones(30, dtype=int), rng.standard_normal(30),
                      rng.uniform(-1, 1, 30)), path)
    code, _, err = _run(capsys, "evaluate", "--input", path, "--score", "ipw", "--bootstrap", "0")
    assert code == 3 and "treated and control" in err


def _rows(text):
    return list(csv.DictReader(text.splitlines()))


def test_plot_data_rows(rct_csv, capsys):
    code, text, _ = _run(capsys, "plot-data", "--input", rct_csv, "--score", "ipw", "--known-pi", "0.5",
                         "--bins", "10")
    assert code == 0 and len(_rows(text)) == 10
    code, text, _ = _run(capsys, "plot-data", "--input", rct_csv, "--score", "ipw", "--known-pi", "0.5",
                         "--bins", "1")
    (row,) = _rows(text)
    assert float(row["count"]) == 500


def test_plot_data_on_calibrated_predictions(tmp_path, capsys):
    path = tmp_path / "cal.csv"
    write_csv(generate_rct(100_000, 0.0, 0, seed=6), path)
    code, text, _ = _run(capsys, "plot-data", "--input", path, "--score", "ipw", "--known-pi", "0.5",
                         "--bins", "5", "--out", tmp_path / "p.csv")
    assert code == 0
    for row in _rows((tmp_path / "p.csv").read_text()):
        # IPW scores here have sd ~ 2.8, so a 20k-row bin mean has se ~ 0.02
        assert abs(float(row["gamma_hat"]) - float(row["mean_delta"])) < 0.07


def _sim(tmp_path, capsys, cfg, *extra):
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(cfg))
    return _run(capsys, "simulate", "--config", path, *extra)


def test_simulate_single_cell(tmp_path, capsys):
    cfg = {"grid": {"setting": "rct", "alpha": 0.0, "n": 500, "score": "ipw"}, "replicates": 10, "seed": 1}
    code, text, err = _sim(tmp_path, capsys, cfg, "--out-dir", tmp_path / "out")
    assert code == 0, err
    assert text.count("| 0 | 500 | 0 |") == 2
    raw = json.loads((tmp_path / "out" / "raw.json").read_text())
    assert len(raw["results"]) == 2 and len(raw["results"][0]["thetas"]) == 10
    assert (tmp_path / "out" / "tables.md").read_text() == text


def test_simulate_table_layout(tmp_path, capsys):
    cfg = {"grid": {"setting": "observational", "alpha": [0.0, 0.15, 0.3], "n": [500, 1000, 2000, 4000],
                    "score": "ipw"}, "replicates": 2, "seed": 1}
    code, text, err = _sim(tmp_path, capsys, cfg, "--format", "csv")
    assert code == 0, err
    blocks = [b for b in text.split("# ") if b]
    assert len(blocks) == 2
    for block in blocks:
        lines = block.strip().splitlines()
        assert lines[1] == "alpha,N,P,bias,se,s_bias,mse"
        assert len(lines) == 2 + 12


def test_simulate_rejects_alpha(tmp_path, capsys):
    code, _, err = _sim(tmp_path, capsys, {"grid": {"alpha": 1.5}})
    assert code == 2 and "alpha" in err


def test_simulate_high_dim_expansion(tmp_path, capsys):
    from eceth.cli import expand_grid

    cells = expand_grid({"setting": "observational", "high_dim": True, "n": [500, 1000]})
    assert [(c["n"], c["P_extra"]) for c in cells] == [(500, 50), (1000, 50), (1000, 100)]


def test_simulate_raw_json_is_deterministic(tmp_path, capsys):
    cfg = {"grid": {"setting": "rct", "alpha": [0.0, 0.3], "n": 300, "score": "aipw",
                    "outcome": {"kind": "ridge"}}, "replicates": 3, "seed": 2}
    outs = []
    for threads in ("1", "2"):
        code, _, err = _sim(tmp_path, capsys, cfg, "--threads", threads, "--out-dir", tmp_path / threads)
        assert code == 0, err
        outs.append((tmp_path / threads / "raw.json").read_bytes())
    assert outs[0] == outs[1]
