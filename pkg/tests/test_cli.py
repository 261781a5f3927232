import json
import subprocess
import sys

import numpy as np
import pytest

from dickman.cli import main


def run(args, env=None):
    return subprocess.run(
        [sys.executable, "-m", "dickman", *args],
        capture_output=True,
        text=True,
        env=env,
    )


def test_rho_exp():
    r = run(["rho", "--utility", "exp", "--alpha", "2", "--theta", "1"])
    assert r.returncode == 0
    assert r.stdout.split() == ["0.5", "concave:theta/(theta+1)"]


def test_sample_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["sample", "--theta", "1", "--depth", "60", "--samples", "1000", "--seed", "7", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    meta = [l for l in lines if l.startswith("#")]
    assert "# seed=7" in meta and "# depth=60" in meta
    body = np.loadtxt(out, delimiter=",", comments="#", skiprows=len(meta) + 1)
    assert body.size == 1000 and np.all(body >= 0)


def test_outputs_byte_identical(tmp_path):
    paths = []
    for i, threads in enumerate(("1", "3")):
        p = tmp_path / f"{i}.csv"
        assert main(["sample", "--samples", "300000", "--depth", "20", "--seed", "9", "--threads", threads, "-o", str(p)]) == 0
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        main(["prime-sum", "--n", "500", "--samples", "2000", "--format", "json", "-o", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_seed_from_environment(tmp_path):
    import os

    env = dict(os.environ, DICKMAN_SEED="5")
    a = run(["sample", "--samples", "5", "--depth", "3"], env=env).stdout
    b = run(["sample", "--samples", "5", "--depth", "3", "--seed", "5"]).stdout
    c = run(["sample", "--samples", "5", "--depth", "3"], env={k: v for k, v in os.environ.items() if k != "DICKMAN_SEED"}).stdout
    assert a == b
    assert "# seed=0" in c


def test_bound_check_json(capsys):
    code = main(["bound-check", "--claim", "weighted-bernoulli", "--n", "100", "--samples", "100000", "--seed", "7"])
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1
    rec = json.loads(out[0])
    assert rec["theoretical"] == 0.0075
    assert rec["verdict"] in ("pass", "inconclusive")
    assert code == 0


def test_bound_check_list(capsys):
    assert main(["bound-check", "--list"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert {r["claim_id"] for r in rows} >= {"weighted-bernoulli", "recursion-decay", "size-bias"}
    assert all(r["statement"] for r in rows)


def test_bound_check_fail_exit_code(monkeypatch, capsys):
    from dickman import cli
    from dickman.report import BoundReport

    monkeypatch.setattr(cli, "check_bound", lambda cid, p: BoundReport(cid, 0.1, 1.0, 0.01, 10, "fail"))
    assert main(["bound-check", "--claim", "weighted-bernoulli"]) == 1


@pytest.mark.parametrize(
    "args",
    [
        ["sample", "--theta", "-1"],
        ["sample", "--samples", "many"],
        ["bound-check"],
        ["bound-check", "--claim", "nope"],
        ["nonsense"],
        ["rho", "--utility", "table"],
        ["rho", "--utility", "power", "--power-a", "2"],
    ],
)
def test_usage_errors(args):
    r = run(args)
    assert r.returncode == 2
    err = r.stderr.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("dickman: error:")


def test_stein_export(tmp_path):
    p = tmp_path / "stein.csv"
    assert main(["stein", "--theta", "1", "--x-max", "2", "--epsilon", "1e-4", "-o", str(p)]) == 0
    text = p.read_text().splitlines()
    assert text[0] == "# theta=1.0"
    assert text[4] == "x,f,f_prime,f_double_prime"


def test_table_utility(tmp_path, capsys):
    t = tmp_path / "u.csv"
    xs = np.linspace(0, 20, 41)
    np.savetxt(t, np.column_stack([xs, np.log1p(xs) / np.log(2)]), delimiter=",")
    assert main(["rho", "--utility", "table", "--table", str(t), "--format", "json"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["certified"] and rec["rho"] == 0.5


def test_prime_table_and_distance(tmp_path, capsys):
    cache = tmp_path / "p.bin"
    assert main(["prime-table", "--n", "1000", "--table-cache", str(cache)]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["p_n"] == 7919 and cache.exists()
    assert main(["distance", "--depth", "4", "--samples", "20000", "--n-boot", "20"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["smooth_lower"] <= rec["w1"] + 4 * rec["w1_stderr"] + 4 * rec["smooth_lower_stderr"]
