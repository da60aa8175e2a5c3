import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from idgp.cli import (
    AVERAGE_LABEL,
    CSV_COLUMNS,
    BenchPlan,
    BenchRow,
    classify_instances,
    combination_averages,
    main,
    parse_int_range,
    rank_combinations,
    read_bench_csv,
    run_bench,
    worker_count,
)
from idgp.core import compute_Z, load_instance, save_instance
from idgp.errors import IdgpError, UnsupportedCombinationError
from idgp.gen import random_feasible_instance
from idgp.measures import partial_reflection

DATA = Path(__file__).parent / "data"


@pytest.fixture
def instance_file(tmp_path):
    path = tmp_path / "inst.json"
    save_instance(random_feasible_instance(10, 3, 0.1, seed=2), path)
    return path


def test_parse_int_range():
    assert parse_int_range("10..13") == [10, 11, 12, 13]
    assert parse_int_range("10..20..5") == [10, 15, 20]
    assert parse_int_range("3,5") == [3, 5]


def test_generate_random(tmp_path):
    out = tmp_path / "g.json"
    assert main(["generate", "--random", "--n", "37", "--k", "3", "--width", "0.1", "--seed", "7", "-o", str(out)]) == 0
    inst = load_instance(out)
    assert inst.n == 37 and inst.reference is not None


def test_generate_pdb_and_kdmdgp(tmp_path, capsys):
    out = tmp_path / "p.json"
    assert main(["generate", "--pdb", str(DATA / "helix37.pdb"), "--backbone", "-o", str(out)]) == 0
    assert load_instance(out).n == 37
    assert main(["generate", "--kdmdgp", "--n", "12", "--k", "2", "--s", "0.2"]) == 0
    assert json.loads(capsys.readouterr().out)["n"] == 12


def test_generate_zstudy(tmp_path):
    out = tmp_path / "z.csv"
    assert main(["generate", "--zstudy", "--n", "10..12", "--s", "0.1", "--samples", "20", "-o", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["n"]) for r in rows] == [10, 11, 12]


def test_solve_prints_summary(instance_file, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["solve", str(instance_file), "--time", "5", "--seed", "1", "-o", str(out)]) == 0
    summary = capsys.readouterr().out
    assert "phi=" in summary and "psi=" in summary and "cpu_s=" in summary
    report = json.loads(out.read_text())
    assert report["phi"] <= report["psi"] and report["demi"] is not None


def test_solve_unsupported_pair_is_usage_error(instance_file, capsys):
    with pytest.raises(SystemExit) as info:
        main(["solve", str(instance_file), "--solver", "mwu", "--formulation", "idgp3"])
    assert info.value.code == 2
    assert "does not run" in capsys.readouterr().err


def test_solve_export_sdp(instance_file, tmp_path):
    out = tmp_path / "x.dat-s"
    assert main(["solve", str(instance_file), "--export-sdp", "sdprel", "-o", str(out)]) == 0
    lines = [line for line in out.read_text().splitlines() if not line.startswith('"')]
    inst = load_instance(instance_file)
    assert int(lines[0]) == 2 * inst.m and lines[2].split()[0] == "10"


def measure(capsys, *args):
    assert main(["measure", *map(str, args)]) == 0
    return json.loads(capsys.readouterr().out)


def test_measure_identical(instance_file, tmp_path, capsys):
    inst = load_instance(instance_file)
    sol = tmp_path / "x.json"
    sol.write_text(json.dumps(inst.reference.tolist()))
    out = measure(capsys, instance_file, sol, "--measures", "phi,psi,crmsd,demi,demi_alg1")
    assert out["phi"] == 0 and out["psi"] == 0
    assert out["crmsd"] == pytest.approx(0, abs=1e-9)
    assert out["demi"] == pytest.approx(0, abs=1e-9)


def test_measure_isomer(tmp_path, capsys):
    inst = random_feasible_instance(10, 3, 0.1, seed=5)
    instance_file = tmp_path / "iso.json"
    save_instance(inst, instance_file)
    v = max(compute_Z(inst).Z)
    assert v > 4
    iso = partial_reflection(inst.reference, v, 3)
    sol = tmp_path / "iso.txt"
    np.savetxt(sol, iso)
    out = measure(capsys, instance_file, sol, "--measures", "crmsd,demi")
    assert out["crmsd"] > 0.1
    assert out["demi"] <= 1e-6


def test_measure_demi_needs_order(tmp_path, capsys):
    inst = random_feasible_instance(8, 2, 0.1, seed=1)
    bare = tmp_path / "bare.json"
    data = inst.to_dict()
    data["order"] = None
    bare.write_text(json.dumps(data))
    assert main(["measure", str(bare), str(bare), "--measures", "demi"]) == 1
    assert "order" in capsys.readouterr().err


# -- bench ---------------------------------------------------------------------------------


@pytest.fixture
def two_instances(tmp_path):
    paths = []
    for seed in (1, 2):
        p = tmp_path / f"i{seed}.json"
        save_instance(random_feasible_instance(9, 3, 0.1, seed=seed), p)
        paths.append(str(p))
    return paths


def test_bench_plan_validates():
    with pytest.raises(UnsupportedCombinationError):
        BenchPlan(["a"], [("mwu", "idgp1")])
    with pytest.raises(IdgpError):
        BenchPlan([], [("ms", "idgp1")])


def test_bench_rows_and_averages(two_instances):
    plan = BenchPlan(two_instances, [("ms", "idgp1"), ("vns", "idgp3")], max_local=2)
    report = run_bench(plan)
    lines = report.to_csv().splitlines()
    assert lines[0].split(",") == CSV_COLUMNS
    assert len(lines) == 1 + 4 + 2
    assert [r.instance for r in report.rows] == ["i1", "i1", "i2", "i2"]
    for avg in report.averages:
        rows = [r for r in report.rows if r.combination == avg.combination]
        assert avg.phi == pytest.approx(sum(r.phi for r in rows) / len(rows), abs=1e-12)
    for r in report.rows:
        assert r.phi <= r.psi
    ranked = report.ranking
    assert [v for _, v in ranked] == sorted(v for _, v in ranked)


def test_bench_failures_recorded(two_instances, tmp_path):
    missing = str(tmp_path / "missing.json")
    report = run_bench(BenchPlan(two_instances[:1] + [missing], [("ms", "idgp1")], max_local=1))
    assert report.rows[1].status.startswith("error:")
    assert report.rows[0].status == "ok"


@pytest.mark.parametrize("workers", [1, 2])
def test_bench_csv_byte_identical(two_instances, tmp_path, workers):
    outs = []
    for k in range(2):
        out = tmp_path / f"b{workers}{k}.csv"
        args = ["bench", *two_instances, "--combo", "ms:idgp1", "--combo", "mwu", "--T", "2"]
        args += ["--max-local", "2", "--workers", str(workers), "-o", str(out)]
        assert main(args) == 0
        outs.append(out.read_bytes())
        assert Path(str(out) + ".timings.csv").exists()
    assert outs[0] == outs[1]


def test_bench_serial_equals_parallel(two_instances):
    plan = BenchPlan(two_instances, [("ms", "idgp1"), ("vns", "idgp1")], seeds=[0, 1], max_local=2)
    serial = run_bench(plan, workers=1).to_csv(include_times=False)
    parallel = run_bench(plan, workers=3).to_csv(include_times=False)
    assert serial == parallel


def row(instance, combo, phi, psi, cpu):
    solver, formulation = combo.split(":")
    return BenchRow(instance, solver, formulation, 0, phi, psi, None, cpu, "ok")


def test_classification_rule():
    rows = [
        row("a", "ms:idgp1", 0.0, 0.0, 0.5),
        row("a", "vns:idgp1", 0.1, 0.2, 0.5),
        row("a", "mwu:imwu", 0.1, 0.2, 0.5),
        row("b", "ms:idgp1", 0.0, 0.0, 2.0),
        row("b", "vns:idgp1", 0.1, 0.2, 0.5),
        row("b", "mwu:imwu", 0.1, 0.2, 0.5),
        row("c", "ms:idgp1", 0.0, 0.0, 0.5),
        row("c", "vns:idgp1", 0.1, 0.2, 0.5),
        row("c", "mwu:imwu", 0.1, 0.2, 0.5),
        row("c", "ms:idgp3", 0.1, 0.2, 0.5),
    ]
    assert classify_instances(rows) == {"a": "easy", "b": "hard", "c": "borderline"}


def test_offline_recompute(two_instances, tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["bench", *two_instances, "--combo", "ms:idgp1", "--max-local", "1", "-o", str(out)]) == 0
    rows = read_bench_csv(out)
    body = [r for r in rows if r.instance != AVERAGE_LABEL]
    avgs = combination_averages(body)
    assert avgs[0].phi == pytest.approx([r for r in rows if r.instance == AVERAGE_LABEL][0].phi, abs=1e-12)
    assert rank_combinations(rows)[0][0] == "ms:idgp1"
    capsys.readouterr()
    assert main(["bench", "--from-csv", str(out)]) == 0
    assert "classification" in json.loads(capsys.readouterr().out)


def test_worker_count(monkeypatch):
    monkeypatch.delenv("IDGP_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("IDGP_WORKERS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2
    monkeypatch.setenv("IDGP_WORKERS", "x")
    with pytest.raises(IdgpError):
        worker_count()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "idgp", "bench", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "IDGP_WORKERS" in out.stdout
