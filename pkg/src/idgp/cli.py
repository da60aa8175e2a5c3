"""Command-line harness: ``idgp generate | solve | measure | bench``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import IdgpInstance, as_realization, compute_Z, load_instance, save_instance
from .errors import CapabilityError, GroupTooLargeError, IdgpError, UnsupportedCombinationError
from .gen import RandomDmdgpConfig, ingest_pdb, random_feasible_instance, random_kdmdgp, z_statistics
from .measures import crmsd, demi_alg1, demi_exhaustive, phi, psi
from .sdp import SDP_VARIANTS, export_sdp, write_sdpa
from .solvers import SUPPORTED, Budget, SolveReport, check_combination, solve

log = logging.getLogger("idgp")

WORKERS_ENV = "IDGP_WORKERS"
CSV_COLUMNS = ["instance", "solver", "formulation", "seed", "phi", "psi", "demi", "cpu_s", "status"]
AVERAGE_LABEL = "average"
EASY_TOLERANCE = 1e-4
EASY_SECONDS = 1.0
MEASURES = ("phi", "psi", "crmsd", "demi", "demi_alg1")


# ---------------------------------------------------------------------------
# small parsers


def parse_int_range(text: str) -> list[int]:
    """``"10..60"``, ``"10..60..5"``, ``"10,20,30"`` or ``"37"``."""
    text = text.strip()
    if ".." in text:
        parts = [int(p) for p in text.split("..")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        step = parts[2] if len(parts) == 3 else 1
        if step <= 0:
            raise argparse.ArgumentTypeError(f"bad range step in {text!r}")
        return list(range(parts[0], parts[1] + 1, step))
    try:
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def parse_combination(text: str) -> tuple[str, str]:
    solver, sep, formulation = text.partition(":")
    if not sep:
        formulation = "imwu" if solver == "mwu" else "idgp1"
    return solver, formulation


def load_realization(path, instance: IdgpInstance | None = None) -> np.ndarray:
    """Coordinates from a JSON list, a JSON object with ``realization``, or a whitespace table."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = np.loadtxt(io.StringIO(text), ndmin=2)
    if isinstance(data, dict):
        if "realization" in data:
            data = data["realization"]
        elif "reference" in data and data["reference"] is not None:
            data = data["reference"]
        else:
            raise IdgpError(f"{path}: no realization found")
    n = instance.n if instance is not None else None
    K = instance.K if instance is not None else None
    return as_realization(data, n, K)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    if args.zstudy:
        return _zstudy(args)
    if args.pdb:
        inst = ingest_pdb(args.pdb, backbone=not args.all_atoms, cutoff=args.cutoff, width=args.width)
    elif args.kdmdgp:
        (n,) = args.n[:1]
        inst = random_kdmdgp(RandomDmdgpConfig(n=n, K=args.k[0], s=args.s[0], seed=args.seed))
    else:
        (n,) = args.n[:1]
        inst = random_feasible_instance(n, args.k[0], args.width, seed=args.seed)
    if args.out:
        save_instance(inst, args.out)
        print(f"wrote {args.out}: n={inst.n} m={inst.m} K={inst.K}", file=sys.stderr)
    else:
        json.dump(inst.to_dict(), sys.stdout)
        sys.stdout.write("\n")
    return 0


def _zstudy(args) -> int:
    rows = []
    for K in args.k:
        for s in args.s:
            for n in args.n:
                if n < K:
                    continue
                cfg = RandomDmdgpConfig(n=n, K=K, s=s, seed=args.seed, samples=args.samples)
                rows.append(z_statistics(cfg).as_row())
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=list(rows[0]) if rows else ["n"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# solve


def _budget(time_limit: float | None, max_local: int | None) -> Budget:
    if max_local is not None:
        return Budget(time_limit=None, max_local=max_local)
    return Budget(time_limit=time_limit)


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    if args.export_sdp:
        prob = export_sdp(inst, args.export_sdp)
        target = args.out or Path(args.instance).with_suffix(".dat-s")
        write_sdpa(prob, target)
        print(f"wrote {target}: {prob.n_constraints} constraints, blocks {prob.block_struct}", file=sys.stderr)
        return 0
    formulation = args.formulation or ("imwu" if args.solver == "mwu" else "idgp1")
    report = solve(
        inst,
        args.solver,
        formulation,
        seed=args.seed,
        budget=_budget(args.time, args.max_local),
        eta=args.eta,
        T=args.T,
        theta_rule=args.theta_rule,
    )
    report.demi = _demi_or_none(inst, report.realization)
    summary = f"phi={report.phi:.6g} psi={report.psi:.6g} cpu_s={report.cpu_seconds:.3f}"
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
        print(summary)
    else:
        print(report.to_json())
        print(summary, file=sys.stderr)
    return 0


def _demi_or_none(inst: IdgpInstance, x: np.ndarray) -> float | None:
    if inst.order is None or inst.reference is None:
        return None
    try:
        return demi_exhaustive(inst.reference, x, compute_Z(inst)).residual
    except (GroupTooLargeError, IdgpError):
        return None


# ---------------------------------------------------------------------------
# measure


def compute_measures(inst: IdgpInstance, x: np.ndarray, reference: np.ndarray | None, which) -> dict:
    out = {}
    for name in which:
        if name == "phi":
            out["phi"] = phi(inst, x)
        elif name == "psi":
            out["psi"] = psi(inst, x)
        else:
            if reference is None:
                raise CapabilityError(f"measure {name!r} needs a reference realization")
            if name == "crmsd":
                out["crmsd"] = crmsd(reference, x)
                continue
            if inst.order is None:
                raise CapabilityError(f"measure {name!r} needs a vertex order on the instance")
            structure = compute_Z(inst)
            fn = demi_exhaustive if name == "demi" else demi_alg1
            res = fn(reference, x, structure)
            out[name] = res.residual
            out[name + "_group_element"] = list(res.group_element)
    return out


def cmd_measure(args) -> int:
    inst = load_instance(args.instance)
    x = load_realization(args.solution, inst)
    reference = load_realization(args.reference, inst) if args.reference else inst.reference
    which = args.measures.split(",") if args.measures else ["phi", "psi"] + (["crmsd"] if reference is not None else [])
    unknown = [w for w in which if w not in MEASURES]
    if unknown:
        raise IdgpError(f"unknown measure(s) {', '.join(unknown)}; choose from {', '.join(MEASURES)}")
    print(json.dumps(compute_measures(inst, x, reference, which)))
    return 0


# ---------------------------------------------------------------------------
# bench


@dataclass
class BenchPlan:
    instances: list[str]
    combinations: list[tuple[str, str]]
    seeds: list[int] = field(default_factory=lambda: [0])
    time_limit: float = 20.0
    max_local: int | None = None
    eta: float = 0.5
    T: int = 50
    theta_rule: str = "figure"

    def __post_init__(self):
        if not self.instances or not self.combinations or not self.seeds:
            raise IdgpError("a bench plan needs instances, combinations and seeds")
        for solver, formulation in self.combinations:
            check_combination(solver, formulation)

    @property
    def deterministic(self) -> bool:
        return self.max_local is not None

    def cells(self) -> list[tuple]:
        return [
            (path, solver, formulation, seed)
            for path in self.instances
            for solver, formulation in self.combinations
            for seed in self.seeds
        ]


@dataclass
class BenchRow:
    instance: str
    solver: str
    formulation: str
    seed: int
    phi: float | None
    psi: float | None
    demi: float | None
    cpu_s: float | None
    status: str

    @property
    def combination(self) -> str:
        return f"{self.solver}:{self.formulation}"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _run_cell(plan: BenchPlan, cell) -> BenchRow:
    path, solver, formulation, seed = cell
    name = Path(path).stem
    try:
        inst = load_instance(path)
        report: SolveReport = solve(
            inst,
            solver,
            formulation,
            seed=seed,
            budget=_budget(plan.time_limit, plan.max_local),
            eta=plan.eta,
            T=plan.T,
            theta_rule=plan.theta_rule,
        )
        demi = _demi_or_none(inst, report.realization)
        return BenchRow(name, solver, formulation, seed, report.phi, report.psi, demi, report.cpu_seconds, report.status)
    except Exception as exc:  # a failing cell must not abort the grid
        status = f"error:{type(exc).__name__}"
        log.warning("cell %s failed: %s", cell, exc)
        return BenchRow(name, solver, formulation, seed, None, None, None, None, status)


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return math.fsum(values) / len(values) if values else None


def combination_averages(rows: list[BenchRow]) -> list[BenchRow]:
    """One row per combination, in first-appearance order, averaging successful cells."""
    groups: dict[tuple[str, str], list[BenchRow]] = {}
    for r in rows:
        groups.setdefault((r.solver, r.formulation), []).append(r)
    out = []
    for (solver, formulation), rs in groups.items():
        ok = [r for r in rs if r.phi is not None]
        out.append(
            BenchRow(
                AVERAGE_LABEL,
                solver,
                formulation,
                "",
                _mean(r.phi for r in ok),
                _mean(r.psi for r in ok),
                _mean(r.demi for r in ok),
                _mean(r.cpu_s for r in ok),
                f"ok:{len(ok)}/{len(rs)}",
            )
        )
    return out


def classify_instances(rows: list[BenchRow]) -> dict[str, str]:
    """``easy`` when at least a third of the combinations solve the instance quickly.

    A cell counts when ``phi, psi <= 1e-4`` within 1 s (the time test is
    skipped for rows without a recorded time). Instances with some but fewer
    than a third of such cells are ``borderline``; the rest are ``hard``.
    """
    by_instance: dict[str, dict[str, bool]] = {}
    for r in rows:
        if r.instance == AVERAGE_LABEL:
            continue
        good = (
            r.phi is not None
            and r.phi <= EASY_TOLERANCE
            and r.psi <= EASY_TOLERANCE
            and (r.cpu_s is None or r.cpu_s <= EASY_SECONDS)
        )
        combos = by_instance.setdefault(r.instance, {})
        combos[r.combination] = combos.get(r.combination, False) or good
    out = {}
    for name, combos in by_instance.items():
        hits = sum(combos.values())
        if 3 * hits >= len(combos) and hits > 0:
            out[name] = "easy"
        elif hits:
            out[name] = "borderline"
        else:
            out[name] = "hard"
    return out


def rank_combinations(rows: list[BenchRow]) -> list[tuple[str, float]]:
    """Combinations sorted by ascending average ``phi`` (failed combinations last)."""
    avgs = [r for r in rows if r.instance == AVERAGE_LABEL] or combination_averages(rows)
    ranked = [(r.combination, r.phi if r.phi is not None else math.inf) for r in avgs]
    return sorted(ranked, key=lambda item: (item[1], item[0]))


@dataclass
class BenchReport:
    plan: BenchPlan
    rows: list[BenchRow]

    @property
    def averages(self) -> list[BenchRow]:
        return combination_averages(self.rows)

    @property
    def classification(self) -> dict[str, str]:
        return classify_instances(self.rows)

    @property
    def ranking(self) -> list[tuple[str, float]]:
        return rank_combinations(self.averages)

    def to_csv(self, include_times: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        best = _best_phi_per_instance(self.rows)
        for r in self.rows + self.averages:
            cpu = f"{r.cpu_s:.3f}" if include_times and r.cpu_s is not None else ""
            status = r.status
            if r.instance != AVERAGE_LABEL and r.phi is not None and r.phi == best.get(r.instance):
                status += ";best"
            writer.writerow(
                [r.instance, r.solver, r.formulation, r.seed, _fmt(r.phi), _fmt(r.psi), _fmt(r.demi), cpu, status]
            )
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["instance", "solver", "formulation", "seed", "cpu_s"])
        for r in self.rows:
            writer.writerow([r.instance, r.solver, r.formulation, r.seed, "" if r.cpu_s is None else f"{r.cpu_s:.3f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "ranking": [{"combination": c, "average_phi": None if math.isinf(v) else v} for c, v in self.ranking],
            "averages": [
                {"combination": r.combination, "phi": r.phi, "psi": r.psi, "demi": r.demi, "cpu_s": r.cpu_s, "status": r.status}
                for r in self.averages
            ],
        }


def _best_phi_per_instance(rows: list[BenchRow]) -> dict[str, float]:
    best: dict[str, float] = {}
    for r in rows:
        if r.phi is not None and (r.instance not in best or r.phi < best[r.instance]):
            best[r.instance] = r.phi
    return best


def read_bench_csv(path) -> list[BenchRow]:
    """Rows of a bench CSV (``;best`` markers stripped), for offline analysis."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            num = lambda key: float(rec[key]) if rec[key] else None  # noqa: E731
            rows.append(
                BenchRow(
                    rec["instance"],
                    rec["solver"],
                    rec["formulation"],
                    int(rec["seed"]) if rec["seed"] else "",
                    num("phi"),
                    num("psi"),
                    num("demi"),
                    num("cpu_s"),
                    rec["status"].replace(";best", ""),
                )
            )
    return rows


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get(WORKERS_ENV, "").strip()
    if not env:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise IdgpError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None


def run_bench(plan: BenchPlan, workers: int = 1) -> BenchReport:
    """Run every cell; rows come back in plan order whatever the completion order."""
    cells = plan.cells()
    if workers <= 1 or len(cells) <= 1:
        rows = [_run_cell(plan, cell) for cell in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, [plan] * len(cells), cells))
    return BenchReport(plan, rows)


def cmd_bench(args) -> int:
    if args.from_csv:
        rows = read_bench_csv(args.from_csv)
        report = BenchReport(plan=None, rows=[r for r in rows if r.instance != AVERAGE_LABEL])
        print(json.dumps(report.to_dict(), indent=2))
        return 0
    if not args.instances:
        raise IdgpError("bench needs at least one instance (or --from-csv)")
    plan = BenchPlan(
        instances=[str(p) for p in args.instances],
        combinations=[parse_combination(c) for c in args.combo],
        seeds=args.seeds,
        time_limit=args.time,
        max_local=args.max_local,
        eta=args.eta,
        T=args.T,
        theta_rule=args.theta_rule,
    )
    report = run_bench(plan, worker_count(args.workers))
    # deterministic runs keep timings out of the CSV so reruns are byte-identical
    text = report.to_csv(include_times=not plan.deterministic)
    if args.out:
        Path(args.out).write_text(text)
        if plan.deterministic:
            Path(str(args.out) + ".timings.csv").write_text(report.timings_csv())
    else:
        sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    else:
        print(_ranking_table(report), file=sys.stderr)
    return 0


def _ranking_table(report: BenchReport) -> str:
    lines = ["rank  combination            avg_phi"]
    for i, (combo, value) in enumerate(report.ranking, start=1):
        lines.append(f"{i:>4}  {combo:<22} {value:.6g}")
    for name, label in report.classification.items():
        lines.append(f"{name}: {label}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idgp", description="Interval distance geometry toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="create instances or |Z| statistics")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--random", action="store_true", help="feasible instance on a random-walk realization (default)")
    src.add_argument("--kdmdgp", action="store_true", help="unit-weight random graph with pruning probability --s")
    src.add_argument("--pdb", metavar="FILE", help="instance from the ATOM records of a PDB file")
    src.add_argument("--zstudy", action="store_true", help="write |Z| statistics as CSV")
    g.add_argument("--n", type=parse_int_range, default=[37], help="vertices; a range like 10..60 for --zstudy")
    g.add_argument("--k", type=parse_int_range, default=[3], help="dimension(s) K")
    g.add_argument("--s", type=parse_float_list, default=[0.1], help="pruning-edge probability (comma list)")
    g.add_argument("--width", type=float, default=0.1, help="relative interval half-width")
    g.add_argument("--cutoff", type=float, default=5.0, help="PDB distance cutoff in Angstrom")
    g.add_argument("--backbone", action="store_true", default=True, help="PDB: keep N, CA, C only (default)")
    g.add_argument("--all-atoms", action="store_true", help="PDB: keep every atom")
    g.add_argument("--samples", type=int, default=500, help="graphs per configuration for --zstudy")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out", help="output file (JSON or .txt instance, CSV for --zstudy)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run one solver/formulation on an instance")
    s.add_argument("instance", help="instance file (.json or text)")
    s.add_argument("--solver", choices=sorted(SUPPORTED), default="ms")
    s.add_argument("--formulation", help="formulation id (default idgp1, or imwu for mwu)")
    s.add_argument("--time", type=float, default=20.0, help="wall-clock budget in seconds")
    s.add_argument("--max-local", type=int, help="cap on local descents; disables the time limit")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eta", type=float, default=0.5, help="MWU step in (0, 1/2]")
    s.add_argument("--T", type=int, default=50, help="MWU iterations")
    s.add_argument("--theta-rule", choices=("figure", "text"), default="figure")
    s.add_argument("--export-sdp", choices=SDP_VARIANTS, help="write an SDPA file instead of solving")
    s.add_argument("-o", "--out", help="report JSON (or SDPA file with --export-sdp)")
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("measure", help="errors, cRMSD and DEMI of a realization")
    m.add_argument("instance")
    m.add_argument("solution", help="realization: JSON array, report JSON, or whitespace table")
    m.add_argument("--reference", help="reference realization (defaults to the instance's)")
    m.add_argument("--measures", help=f"comma list from {','.join(MEASURES)}")
    m.set_defaults(func=cmd_measure)

    b = sub.add_parser(
        "bench",
        help="run a solver x formulation grid",
        description=f"Worker processes default to ${WORKERS_ENV} (1 when unset).",
    )
    b.add_argument("instances", nargs="*", help="instance files")
    b.add_argument(
        "--combo",
        action="append",
        default=None,
        help="solver:formulation, repeatable (default ms:idgp1 and mwu:imwu)",
    )
    b.add_argument("--seeds", type=parse_int_range, default=[0])
    b.add_argument("--time", type=float, default=20.0, help="per-run budget in seconds")
    b.add_argument("--max-local", type=int, help="per-run local-descent cap; makes the CSV reproducible")
    b.add_argument("--eta", type=float, default=0.5)
    b.add_argument("--T", type=int, default=50)
    b.add_argument("--theta-rule", choices=("figure", "text"), default="figure")
    b.add_argument("--workers", type=int, help=f"worker processes (overrides ${WORKERS_ENV})")
    b.add_argument("-o", "--out", help="CSV output (stdout when omitted)")
    b.add_argument("--report", help="JSON with classification, averages and ranking")
    b.add_argument("--from-csv", help="recompute classification and ranking from an existing CSV")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "bench" and args.combo is None:
        args.combo = ["ms:idgp1", "mwu:imwu"]
    try:
        if args.command == "solve" and not args.export_sdp:
            check_combination(args.solver, args.formulation or ("imwu" if args.solver == "mwu" else "idgp1"))
        return args.func(args)
    except UnsupportedCombinationError as exc:
        parser.error(str(exc))
    except (IdgpError, OSError) as exc:
        print(f"idgp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
