import json
from dataclasses import replace

import numpy as np
import pytest

from delayheat.cli import main, read_csv_columns, read_sweep_csv, run_simulate
from delayheat.config import RunConfig, load_config, parse_config
from delayheat.errors import ConfigError


def _doc(**over):
    doc = {
        "problem": {"L": np.pi, "potential": {"kind": "constant", "value": 2.0}},
        "delay": 1.0,
        "simulation": {"dt": 1e-3, "t_final": 12.0},
    }
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    return doc


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _problems(doc):
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    return info.value.problems


# -- loading -----------------------------------------------------------------

def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, _doc()))
    assert isinstance(cfg, RunConfig)
    assert cfg.grid_N == 2000 and cfg.safety_factor == 1.1
    assert cfg.y0 == {"mode": 1, "amplitude": 1.0}
    assert cfg.window() == (2.0, 12.0)
    assert cfg.sweep_parameter is None and not cfg.open_loop


def test_delay_not_multiple_of_step_names_both_fields():
    probs = _problems(_doc(delay=1.0005, simulation={"dt": 1e-3}))
    assert any("delay" in p and "simulation.dt" in p for p in probs)


def test_negative_length_rejected():
    probs = _problems(_doc(problem={"L": -1.0}))
    assert any(p.startswith("problem.L") for p in probs)


def test_all_problems_reported_together():
    doc = _doc(problem={"L": -1.0, "colour": 3}, simulation={"dt": 0.3, "t_final": -2.0})
    probs = _problems(doc)
    assert len(probs) >= 3
    assert any("problem.colour" in p for p in probs)
    assert any("simulation.t_final" in p for p in probs)


def test_riccati_rejected():
    probs = _problems(_doc(design={"method": "riccati"}))
    assert any("design.method" in p for p in probs)


def test_step_must_resolve_delay():
    probs = _problems(_doc(delay=0.002, simulation={"dt": 1e-3, "t_final": 1.0}))
    assert any("delay / 4" in p for p in probs)


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "delay": 1.0,\n  "problem": {"L": 3.14,,}\n}')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert "line 3, column" in str(info.value)


def test_empty_sweep_rejected():
    probs = _problems(_doc(sweep={"parameter": "D", "values": []}))
    assert any("sweep.values" in p for p in probs)


def test_c0_sweep_needs_constant_potential():
    doc = _doc(problem={"potential": {"kind": "sampled",
                                      "samples": [[0.0, 1.0], [np.pi, 2.0]]}},
               sweep={"parameter": "c0", "values": [1.0]})
    assert any("constant potential" in p for p in _problems(doc))


def test_with_value_swaps_parameter():
    cfg = parse_config(_doc(sweep={"parameter": "D", "values": [0.5, 1.0]}))
    row = cfg.with_value("c0", 5.0)
    assert row.potential == {"kind": "constant", "value": 5.0}
    assert row.sweep_values == () and row.D == 1.0


# -- verbs -------------------------------------------------------------------

def test_design_verb(tmp_path, capsys):
    code = main(["design", "--config", _write(tmp_path, _doc()), "--out", str(tmp_path / "o")])
    assert code == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert set(report) >= {"spectral", "reduction", "gain", "weights"}
    assert report["reduction"]["n"] == 1
    assert "n=1" in capsys.readouterr().out


def test_headline_simulate(tmp_path, capsys):
    doc = _doc(outputs={"snapshot_times": [0.0, 6.0]})
    code = main(["simulate", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")])
    assert code == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    slope = float(line.split("h1_slope=")[1].split()[0])
    assert -1.5 <= slope <= -0.5
    assert "VD monotone after 2D" in line
    out = tmp_path / "o"
    for name in ("report.json", "trajectory.csv", "monitor.csv", "snapshot_t0.csv",
                 "snapshot_t6.csv"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["summary"] == line
    assert report["checks"]["series"]["converged"]


def test_open_loop_summary(tmp_path, capsys):
    doc = _doc(simulation={"t_final": 6.0, "open_loop": True})
    code = main(["simulate", "--config", _write(tmp_path, doc), "--out", str(tmp_path)])
    assert code == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert "UNSTABLE (open loop)" in line
    assert float(line.split("h1_slope=")[1].split()[0]) > 0


def _drop_input(sys_):
    return replace(sys_, B1=np.zeros_like(sys_.B1))


def test_uncontrollable_system_exits_with_design_error(tmp_path, capsys):
    code = main(["design", "--config", _write(tmp_path, _doc()), "--out", str(tmp_path)],
                system_hook=_drop_input)
    assert code == 3
    assert "Kalman rank condition" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path):
    assert main(["simulate", "--config", _write(tmp_path, _doc(delay=-1.0))]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["sweep", "--config", _write(tmp_path, _doc())]) == 2


def test_numerical_error_exit_code(tmp_path, capsys):
    # five unstable modes with all six poles at -1: the Lyapunov certificate is
    # too ill-conditioned to factor
    doc = _doc(problem={"potential": {"kind": "constant", "value": 30.0}, "grid_N": 500},
               delay=0.0, simulation={"t_final": 1.0})
    assert main(["design", "--config", _write(tmp_path, doc), "--out", str(tmp_path)]) == 4
    assert "NumericalError" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, capsys):
    # exp(lambda_1 t) with lambda_1 = 1 passes the 1e12 divergence limit near t = 27.6
    doc = _doc(problem={"grid_N": 500},
               simulation={"t_final": 30.0, "open_loop": True, "J": 5})
    assert main(["simulate", "--config", _write(tmp_path, doc), "--out", str(tmp_path)]) == 5
    assert "last finite state" in capsys.readouterr().err


# -- outputs -----------------------------------------------------------------

def test_outputs_are_deterministic(tmp_path):
    doc = _doc(simulation={"t_final": 3.0}, outputs={"snapshot_times": [2.5]})
    path = _write(tmp_path, doc)
    for name in ("a", "b"):
        assert main(["simulate", "--config", path, "--out", str(tmp_path / name)]) == 0
    for name in ("report.json", "trajectory.csv", "monitor.csv", "snapshot_t2.5.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_round_trip(tmp_path):
    cfg = parse_config(_doc(simulation={"t_final": 3.0}))
    _, res = run_simulate(cfg, tmp_path, echo=lambda s: None)
    traj = res["trajectory"]
    cols = read_csv_columns(tmp_path / "trajectory.csv")
    for name, ref in (("t", traj.t), ("u_D", traj.u_D), ("alpha", traj.alpha),
                      ("h1_norm", traj.h1_norm), ("VD", traj.VD)):
        np.testing.assert_array_equal(cols[name], ref)
    np.testing.assert_array_equal(np.column_stack([cols[f"w_{j}"] for j in range(1, 16)]),
                                  traj.w)
    mon = read_csv_columns(tmp_path / "monitor.csv")
    np.testing.assert_array_equal(mon["V1"], traj.V1)


def test_c0_sweep_counts_unstable_modes(tmp_path):
    doc = _doc(simulation={"t_final": 4.0},
               sweep={"parameter": "c0", "values": [0.0, 1.0, 2.0, 5.0], "workers": 2})
    assert main(["sweep", "--config", _write(tmp_path, doc), "--out", str(tmp_path)]) == 0
    rows = read_sweep_csv(tmp_path / "sweep.csv")
    assert [r["status"] for r in rows] == ["ok"] * 4
    # c0 = 1 sits on lambda_1 = 0; the discrete eigenvalue lands at +2e-7 and the
    # mode is kept as (borderline) unstable
    assert [int(r["n"]) for r in rows] == [0, 1, 1, 2]
    report = json.loads((tmp_path / "row_001_c0_1" / "report.json").read_text())
    assert report["spectral"]["near_zero_eigenvalue"]


def test_sweep_records_row_failures(tmp_path):
    doc = _doc(problem={"grid_N": 500}, delay=0.0, simulation={"t_final": 1.0},
               sweep={"parameter": "c0", "values": [2.0, 30.0], "workers": 1})
    assert main(["sweep", "--config", _write(tmp_path, doc), "--out", str(tmp_path)]) == 0
    rows = read_sweep_csv(tmp_path / "sweep.csv")
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"] == "NumericalError" and rows[1]["message"]
