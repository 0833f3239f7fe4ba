import csv
import json

import numpy as np
import pytest

from riccmod import bench, serialize
from riccmod.cli import EXIT_OK, EXIT_RESIDUAL, EXIT_SOLVER, main
from riccmod.errors import ThresholdExceeded
from riccmod.generate import SEMIDEFINITE, gen_cftoc, gen_general, gen_problem

from cases import cftoc


def _same(a, b):
    for name in vars(a):
        x, y = getattr(a, name), getattr(b, name)
        if isinstance(x, list):
            assert len(x) == len(y)
            for u, v in zip(x, y):
                np.testing.assert_array_equal(u, v)
        else:
            np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("make", [
    lambda: gen_problem(3, 4, 3, 2, SEMIDEFINITE),
    lambda: gen_cftoc(3, 4, 3, 2, active_frac=0.5),
])
def test_serialization_round_trip(make, tmp_path):
    p = make()
    path = tmp_path / "p.json"
    serialize.dump(p, path)
    _same(p, serialize.load(path))


def test_infinite_bounds_round_trip():
    p = cftoc(1, [[1.0, 0.0]], 1, np.eye(2), [0.0, 0.0], [-np.inf, -1.0], [np.inf, 2.0], [1.0])
    d = json.loads(json.dumps(serialize.to_dict(p)))
    assert d["umin"][0][0] is None
    _same(p, serialize.from_dict(d))


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        serialize.from_dict({"kind": "mystery"})


def test_generators_are_deterministic():
    _same(gen_cftoc(7, 5, 3, 2), gen_cftoc(7, 5, 3, 2))
    _same(gen_general(7, 3, 2, 2, 2, 2), gen_general(7, 3, 2, 2, 2, 2))
    assert not np.array_equal(gen_problem(1, 3, 2, 2).A[0], gen_problem(2, 3, 2, 2).A[0])


def test_scenario_validation():
    assert bench.BenchScenario(N=10, tm="last").stage() == 9
    assert bench.BenchScenario(N=11, tm="frac:0.5").stage() == 5
    for bad in ({"tm": "middle"}, {"tm": "frac:2"}, {"reps": 0}, {"kind": "swap"}):
        with pytest.raises(ValueError):
            bench.BenchScenario(**bad)


def test_logspaced_sizes():
    assert bench.logspaced_sizes(10, 200, 5) == [10, 21, 45, 95, 200]


def test_measure_reports_small_residuals():
    p, old, new = bench.make_instance(0, 6, 8, 2, "remove", 2)
    rec = bench.measure(p, old, new, rep=0, inner=1)
    assert rec.resid_recompute <= 1e-10 and rec.resid_modify <= 1e-10
    assert rec.rank == 2 and rec.pk_diff <= 1e-10


def test_verify_empty_input_passes_with_warning():
    rep = bench.verify_residuals([])
    assert rep.passed and rep.warning


def test_corrupted_gain_is_caught(monkeypatch):
    real = bench.modify_factorization

    def corrupt(*args, **kw):
        f, rep = real(*args, **kw)
        f.K[0] = f.K[0].copy()
        f.K[0][0, 0] += 1e-3
        return f, rep

    monkeypatch.setattr(bench, "modify_factorization", corrupt)
    p, old, new = bench.make_instance(1, 5, 6, 3, "add", 1)
    rec = bench.measure(p, old, new, rep=0, inner=1)
    with pytest.raises(ThresholdExceeded) as ei:
        bench.verify_residuals([rec], 1e-8)
    assert ei.value.worst == 0


def test_cli_round_trip(tmp_path, capsys):
    prob = tmp_path / "p.json"
    assert main(["gen", "--seed", "2", "--horizon", "5", "--out", str(prob)]) == EXIT_OK
    out = tmp_path / "sol.json"
    assert main(["solve", str(prob), "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["residual"] <= 1e-8
    assert main(["solve", str(prob), "--tol", "1e-30", "--out", str(out)]) == EXIT_RESIDUAL

    csv_path = tmp_path / "b.csv"
    assert main(["bench", "--sizes", "4,6", "--horizon", "4", "--reps", "1", "--quiet",
                 "--out", str(csv_path)]) == EXIT_OK
    assert csv_path.with_suffix(".json").exists()
    assert main(["verify", str(csv_path)]) == EXIT_OK

    rows = list(csv.DictReader(csv_path.open()))
    rows[1]["resid_modify"] = "1e-3"
    with csv_path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=bench.HEADER)
        w.writeheader()
        w.writerows(rows)
    assert main(["verify", str(csv_path)]) == EXIT_RESIDUAL
    assert "FAIL" in capsys.readouterr().out


def test_cli_solver_error(tmp_path):
    p = cftoc(1, [[1.0, 0.0]], 1, np.diag([1.0, 0.0]), [0.0, 1.0],
              [-np.inf, -np.inf], [np.inf, 2.0], [1.0])
    path = tmp_path / "unbounded.json"
    serialize.dump(p, path)
    assert main(["solve", str(path)]) == EXIT_SOLVER


def test_cli_no_modify_leaves_columns_blank(tmp_path):
    path = tmp_path / "b.csv"
    assert main(["bench", "--sizes", "4", "--horizon", "3", "--reps", "1", "--quiet",
                 "--no-modify", "--out", str(path)]) == EXIT_OK
    row = next(csv.DictReader(path.open()))
    assert row["t_modify_ns"] == "" and row["resid_modify"] == ""
