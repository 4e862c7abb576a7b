import subprocess
import sys

import numpy as np
import pytest
import yaml

from gasmix.cli import main
from gasmix.network import load_network
from gasmix.simulator import SeriesTable

from conftest import data_path

SCENARIO = str(data_path("four_node_scenario.yaml"))
NETWORK = str(data_path("four_node_network.yaml"))

pytestmark = pytest.mark.filterwarnings("ignore::gasmix.dynamics.FlowReversalWarning")


def test_refine(tmp_path, capsys):
    out = tmp_path / "fine.yaml"
    assert main(["refine", "--network", NETWORK, "--cap-km", "10", "--out", str(out)]) == 0
    assert len(load_network(out).edges) == 13
    assert "13 segments" in capsys.readouterr().out


def test_steady(tmp_path):
    out = tmp_path / "steady.yaml"
    assert main(["steady", "--scenario", SCENARIO, "--out", str(out)]) == 0
    doc = yaml.safe_load(out.read_text())
    assert set(doc["ratios"]) == {"red", "yellow"}


def test_simulate_with_constant_controls(tmp_path):
    controls = tmp_path / "controls.csv"
    controls.write_text("t_s,mu_red,mu_yellow\n0,1.3,1.3\n")
    assert main(["simulate", "--scenario", SCENARIO, "--controls", str(controls),
                 "--out-dir", str(tmp_path / "sim")]) == 0
    table = SeriesTable.from_csv(tmp_path / "sim" / "simulated.csv")
    assert table.times[-1] == pytest.approx(24 * 3600.0)
    assert np.all(table.pressure > 0)


def test_optimize_validate_report_chain(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["optimize", "--scenario", SCENARIO, "--out-dir", str(run)]) == 0
    assert "converged" in capsys.readouterr().out
    assert main(["simulate", "--scenario", SCENARIO, "--controls", str(run / "controls.csv"),
                 "--initial-state", str(run / "initial_state.yaml"), "--out-dir", str(run)]) == 0
    assert main(["validate", "--optimized", str(run), "--simulated", str(run),
                 "--out", str(run / "report.yaml")]) == 0
    report = yaml.safe_load((run / "report.yaml").read_text())
    assert report["pressure_l2"] <= 2.0 and report["objective"] > 0
    capsys.readouterr()
    assert main(["report", "--run-dir", str(run)]) == 0
    assert "nodal pressure" in capsys.readouterr().out
    header = (run / "plot" / "pressure.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t_h" and "node_2_optimized_mpa" in header and "node_2_simulated_mpa" in header
    assert (run / "plot" / "metrics.csv").is_file() and (run / "plot" / "flux.csv").is_file()


def test_run_sweep(tmp_path):
    out = tmp_path / "sweep"
    assert main(["run", "--scenario", SCENARIO, "--out-dir", str(out),
                 "--hydrogen-fraction", "0.05", "--hydrogen-fraction", "0.1", "--workers", "2"]) == 0
    summary = yaml.safe_load((out / "sweep.yaml").read_text())
    assert [s["hydrogen_fraction"] for s in summary] == [0.05, 0.1]
    assert summary[0]["objective"] < summary[1]["objective"]
    assert (out / "h2_0.05" / "report.yaml").is_file()


def test_missing_file_reports_stage(tmp_path, capsys):
    code = main(["steady", "--scenario", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "s.yaml")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error [parse]")


def test_bad_controls_header(tmp_path, capsys):
    controls = tmp_path / "controls.csv"
    controls.write_text("t_h,blue\n0,1.3\n")
    code = main(["simulate", "--scenario", SCENARIO, "--controls", str(controls), "--out-dir", str(tmp_path)])
    assert code == 1 and "error [parse]" in capsys.readouterr().err


def test_module_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "gasmix.cli", "refine", "--network", NETWORK, "--cap-km", "5",
                         "--out", str(tmp_path / "n.yaml")], capture_output=True, text=True)
    assert ok.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "gasmix.cli", "refine", "--network", str(tmp_path / "x.yaml"),
                          "--cap-km", "5", "--out", str(tmp_path / "n.yaml")], capture_output=True, text=True)
    assert bad.returncode == 1 and "error [parse]" in bad.stderr
    usage = subprocess.run([sys.executable, "-m", "gasmix.cli", "refine"], capture_output=True, text=True)
    assert usage.returncode == 2
