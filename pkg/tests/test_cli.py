import json
import subprocess
import sys

import numpy as np
import pytest

from countdesign.cli import main
from countdesign.fisher import Design, xi0
from countdesign.model import ModelSpec
from countdesign.optimality import kw_certify
from countdesign.optimizer import round_to_exact


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_check_optimal_and_not(capsys):
    code, out, _ = run(capsys, "check", "--effects=-2,-2,-2")
    assert code == 0 and "xi0 OPTIMAL" in out
    assert "difficulty exp(-beta)=7.38906" in out
    code, out, _ = run(capsys, "check", "--effects=-0.5,-0.5,-0.5")
    assert code == 3 and "xi0 NOT optimal" in out


def test_check_reads_model_file_with_flag_override(capsys, tmp_path):
    f = tmp_path / "m.json"
    f.write_text(ModelSpec.poisson_gamma([-0.5, -0.5], a=2, b=1).to_json())
    assert run(capsys, "check", str(f))[0] == 3
    assert run(capsys, "check", str(f), "--effects=-3,-3")[0] == 0


def test_check_json_format(capsys):
    code, out, _ = run(capsys, "check", "--effects=-2,-2", "--format", "json")
    d = json.loads(out)
    assert code == 0 and d["xi0_optimal"] and d["pairwise"]["holds"]


@pytest.mark.parametrize("argv, code", [
    (["check", "{not json"], 1),
    (["check", "/nonexistent/model.json"], 1),
    (["check", "--effects=-1,0.5"], 2),
    (["check", "--effects=-1,-1", "--family", "poisson-gamma"], 2),
    (["boundary", "--v-range", "0.5:5"], 2),
    (["boundary", "--v", "1"], 2),
    (["round", "xi0", "--n", "3", "--effects=-1,-1,-1"], 2),
    (["nonsense"], 2),
])
def test_exit_codes(capsys, argv, code):
    got, _, err = run(capsys, *argv)
    assert got == code
    if code != 0:
        assert err


def test_boundary_rows(capsys):
    code, out, _ = run(capsys, "boundary", "--b", "0", "--v", "3")
    assert code == 0
    assert out.splitlines() == ["b,v,u_min", "0,3,2.0"]
    code, out, _ = run(capsys, "boundary")
    rows = out.splitlines()[1:]
    assert {r.split(",")[0] for r in rows} == {"0", "0.5", "1", "2"}
    assert len(rows) == 4 * 90


def test_optimize_json_round_trip(capsys, tmp_path):
    code, out, _ = run(capsys, "optimize", "--effects=0,0,0", "--format", "json")
    assert code == 0
    rep = json.loads(out)
    d = Design.from_dict(rep["design"])
    assert d.size == 8
    np.testing.assert_allclose(d.weights, 0.125, atol=1e-4)
    again = kw_certify(d, ModelSpec.poisson([0, 0, 0]), 1e-6)
    assert again.optimal == rep["certification"]["optimal"]
    assert again.max_sensitivity == pytest.approx(rep["certification"]["max_sensitivity"])


def test_optimize_history_and_nonconvergence(capsys, tmp_path):
    hist = tmp_path / "h.csv"
    code, out, _ = run(capsys, "optimize", "--effects=-0.5,-0.5,-0.5",
                       "--max-iter", "3", "--history", str(hist))
    assert code == 4 and "NOT converged" in out
    lines = hist.read_text().splitlines()
    assert lines[0] == "iteration,logdet,max_sensitivity" and len(lines) == 5


def test_round(capsys):
    code, out, _ = run(capsys, "round", "xi0", "--n", "10", "--effects=-1,-1,-1",
                       "--format", "json")
    d = Design.from_dict(json.loads(out))
    assert code == 0 and d.n == 10 and sorted(d.counts.tolist()) == [2, 2, 3, 3]


def test_round_design_file(capsys, tmp_path):
    f = tmp_path / "d.json"
    f.write_text(Design.approximate([(0,), (1,)], [0.5, 0.5]).to_json())
    code, out, _ = run(capsys, "round", str(f), "--n", "3", "--format", "csv")
    assert out.splitlines()[1:] == ["0,0.5,2", "1,0.5,1"]


def test_efficiency_outputs(capsys):
    code, out, _ = run(capsys, "efficiency", "--effects=0,0", "--reference",
                       "full-factorial")
    assert code == 0 and out.strip() == "0.8399"
    code, out, _ = run(capsys, "efficiency", "--indifference", "3")
    assert "0.7071" in out and "0.5946" in out and "DISCREPANCY" in out
    assert "0.5000" in out


def test_compare(capsys):
    code, out, _ = run(capsys, "compare", "--d1-d2")
    assert code == 0
    assert "det ratio=4.0000" in out and "2.7" in out and "DISCREPANCY" in out
    code, out, _ = run(capsys, "compare", "--effects=-2,-2,-2", "--design", "xi0",
                       "--design", "full-factorial", "--format", "csv")
    rows = out.splitlines()
    assert rows[1].startswith("0:xi0,") and rows[1].split(",")[2] == "1"


def test_simulate(capsys, tmp_path):
    cfg = {"design": round_to_exact(xi0(2), 300).to_dict(),
           "model": ModelSpec.poisson([-1, -1]).to_dict(),
           "replications": 500, "seed": 3}
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps(cfg))
    betas = tmp_path / "b.csv"
    out_file = tmp_path / "report.json"
    code, _, _ = run(capsys, "simulate", str(f), "--format", "json", "-o", str(out_file),
                     "--betas-csv", str(betas))
    assert code == 0
    rep = json.loads(out_file.read_text())
    assert rep["replications"] == 500 and rep["max_rel_error"] < 0.2
    assert len(betas.read_text().splitlines()) == 501
    assert run(capsys, "simulate", str(f), "--replications", "1")[0] == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "countdesign", "boundary", "--b", "1",
                        "--v", "3"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.splitlines()[1] == "1,3,3.0"
