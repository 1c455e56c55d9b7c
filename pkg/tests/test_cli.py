import io as pyio
import subprocess
import sys

import numpy as np
import pytest

from mirrorprox.harness import io
from mirrorprox.harness.cli import main
from mirrorprox.harness.drivers import SolveConfig, solve
from mirrorprox.harness.generators import gen_image_synthetic, gen_matrix_completion
from mirrorprox.harness.reference import image_dual_bound, image_reference, mc_reference


def run_cli(*argv):
    out = pyio.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def summary(text):
    return dict(line.split(None, 1) for line in text.splitlines() if len(line.split(None, 1)) == 2)


def test_mc_known_opt_example(tmp_path):
    trace = tmp_path / "trace.csv"
    code, text = run_cli("solve", "--family", "mc_known_opt", "--n", "64", "--seed", "7",
                         "--max-iters", "2000", "--out", str(trace))
    assert code == 0
    rows = io.read_trace_csv(trace)
    assert [int(r["t"]) for r in rows] == [2 ** k for k in range(11)]
    s = summary(text)
    assert float(s["rel_error"]) <= 1e-3
    assert float(s["lower"]) <= float(s["opt"]) <= float(s["upper"])
    ups = [r["upper"] for r in rows]
    assert all(b <= a for a, b in zip(ups, ups[1:]))


def test_l1_sequential_example():
    code, text = run_cli("solve", "--family", "l1_planted", "--n", "256", "--m", "128", "--c", "1",
                         "--mode", "sequential", "--eps", "1e-5", "--max-iters", "100000")
    assert code == 0
    s = summary(text)
    assert float(s["eps_x"]) <= 1e-5
    assert s["reached"] == "True"


def test_l1_budget_exhausted_is_failure():
    code, text = run_cli("solve", "--family", "l1_planted", "--n", "32", "--mode", "simple",
                         "--eps", "1e-12", "--max-iters", "20")
    assert code == 1
    assert "not reached" in text


@pytest.mark.parametrize("argv", [
    ["verify"],
    ["bounds", "p.npz"],
    ["solve", "--family", "nonsense"],
    ["solve", "--max-iters", "many"],
    ["solve", "--n", "1"],
    ["frobnicate"],
    [],
])
def test_usage_errors(argv):
    assert run_cli(*argv)[0] == 2


def test_help_exits_zero(capsys):
    assert run_cli("--help")[0] == 0


def test_dump_config_and_config_file(tmp_path):
    code, text = run_cli("solve", "--dump-config")
    assert code == 0
    defaults = io.parse_config_text(text)
    assert defaults["family"] == "mc_known_opt" and defaults["start"] == "observed"
    cfg = tmp_path / "run.cfg"
    cfg.write_text("family = matrix_completion\nn = 12\nmax_iters = 5\n")
    code, text = run_cli("solve", "--config", str(cfg), "--n", "10", "--dump-config")
    parsed = io.parse_config_text(text)
    assert (parsed["family"], parsed["n"], parsed["max_iters"]) == ("matrix_completion", "10", "5")
    cfg.write_text("bogus = 1\n")
    assert run_cli("solve", "--config", str(cfg))[0] == 2


def test_thread_env_validation(monkeypatch):
    monkeypatch.setenv("COMP_PROX_THREADS", "lots")
    assert run_cli("solve", "--dump-config")[0] == 2
    monkeypatch.setenv("COMP_PROX_THREADS", "2")
    assert run_cli("solve", "--dump-config")[0] == 0


def test_trace_deterministic_except_time(tmp_path):
    args = ["solve", "--family", "matrix_completion", "--n", "24", "--seed", "3", "--max-iters", "64"]
    run_cli(*args, "--out", str(tmp_path / "a.csv"))
    run_cli(*args, "--out", str(tmp_path / "b.csv"))
    a, b = io.read_trace_csv(tmp_path / "a.csv"), io.read_trace_csv(tmp_path / "b.csv")
    for ra, rb in zip(a, b):
        ra.pop("seconds"), rb.pop("seconds")
    assert a == b and len(a) == 7


def test_trace_bounds_monotone_within_phase(tmp_path):
    run_cli("solve", "--family", "matrix_completion", "--n", "32", "--seed", "1", "--max-iters", "256",
            "--lower-every", "1", "--out", str(tmp_path / "t.csv"))
    rows = io.read_trace_csv(tmp_path / "t.csv")
    for a, b in zip(rows, rows[1:]):
        assert b["upper"] <= a["upper"]
        if a["restarts"] == b["restarts"]:
            assert b["lower"] >= a["lower"]
        assert b["lower"] <= b["upper"]


def test_dump_verify_and_bounds(tmp_path):
    inst_dir, prot = tmp_path / "inst", tmp_path / "prot.npz"
    code, text = run_cli("solve", "--family", "mc_known_opt", "--n", "16", "--seed", "2", "--max-iters", "64",
                         "--dump-instance", str(inst_dir), "--dump-protocol", str(prot),
                         "--solution-dir", str(tmp_path / "sol"))
    assert code == 0
    code, text = run_cli("verify", str(inst_dir))
    assert code == 0 and "optimality residual" in text
    code, text = run_cli("bounds", str(prot), "--instance", str(inst_dir))
    assert code == 0
    b = summary(text)
    opt = float(io.read_config(inst_dir / "meta.txt")["opt"])
    assert float(b["lower"]) <= opt <= float(b["upper"])
    assert io.read_matrix_csv(tmp_path / "sol" / "y.csv").shape == (16, 16)
    assert run_cli("bounds", str(tmp_path / "nope.npz"), "--instance", str(inst_dir))[0] == 1


def test_verify_l1_and_random_mc(tmp_path):
    d = tmp_path / "l1"
    assert run_cli("solve", "--family", "l1_planted", "--n", "16", "--max-iters", "20000", "--eps", "1e-3",
                   "--dump-instance", str(d))[0] == 0
    code, text = run_cli("verify", str(d))
    assert code == 0 and "l1_planted" in text
    r = tmp_path / "mc"
    run_cli("solve", "--family", "matrix_completion", "--n", "8", "--max-iters", "4", "--dump-instance", str(r))
    assert run_cli("verify", str(r))[0] == 2
    assert run_cli("verify", str(tmp_path / "absent"))[0] == 2


def test_image_file_family(tmp_path):
    img = gen_image_synthetic(12, 0).b
    img = (img - img.min()) / (img.max() - img.min())
    io.write_pgm(tmp_path / "in.pgm", img)
    code, text = run_cli("solve", "--family", "image_decomp_file", "--image", str(tmp_path / "in.pgm"),
                         "--max-iters", "32", "--image-out", str(tmp_path / "out_"))
    assert code == 0
    for part in ("low_rank", "sparse", "smooth"):
        assert io.read_pgm(tmp_path / f"out_{part}.pgm").shape == (12, 12)
    s = summary(text)
    assert float(s["lower"]) <= float(s["upper"])
    assert run_cli("solve", "--family", "image_decomp_file")[0] == 2
    assert run_cli("solve", "--family", "image_decomp_synthetic", "--n", "8", "--max-iters", "4",
                   "--dump-protocol", str(tmp_path / "x.npz"))[0] == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mirrorprox", "solve", "--dump-config"], capture_output=True, text=True)
    assert r.returncode == 0 and "family = mc_known_opt" in r.stdout
    r = subprocess.run([sys.executable, "-m", "mirrorprox", "solve", "--n"], capture_output=True, text=True)
    assert r.returncode == 2 and "usage" in r.stderr


# ---------------------------------------------------------------------------
# reference solvers


def test_mc_reference_brackets_cvx():
    cp = pytest.importorskip("cvxpy")
    inst = gen_matrix_completion(8, 4)
    ref = mc_reference(inst, 3000)
    Y = cp.Variable((8, 8))
    rows, cols = np.nonzero(inst.mask)
    obj = (0.5 * cp.sum_squares(Y[rows, cols] - inst.b) + inst.lam * cp.sum(cp.abs(Y)) + inst.mu * cp.normNuc(Y))
    opt = cp.Problem(cp.Minimize(obj)).solve(solver="CLARABEL")
    assert ref.lower <= opt + 1e-6 and ref.upper >= opt - 1e-6
    assert ref.gap <= 1e-5


def test_image_reference_bound_is_valid():
    inst = gen_image_synthetic(8, 1)
    ref = image_reference(inst, iters=2000, check_every=200)
    assert ref.lower <= ref.upper
    assert image_dual_bound(inst, np.zeros((8, 8))) == 0.0
    out = solve(SolveConfig(family="image_decomp_synthetic", n=8, seed=1, max_iters=256))
    assert out.upper >= ref.lower - 1e-9
    assert out.lower <= ref.upper + 1e-9
