"""Local descent and the global heuristics: MultiStart, VNS and MWU."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .core import BoxBounds, IdgpInstance, default_box
from .errors import IdgpError
from .formulations import MeritFunction, PenaltyMerit, PointwiseMerit, build_formulation
from .measures import edge_errors

log = logging.getLogger(__name__)

SOLVED_PHI = 1e-6
PENALTY_SCHEDULE = (1.0, 10.0, 100.0, 1e3, 1e4)
VNS_KMAX = 5
VNS_LOCAL_SEARCHES = 5
POINTWISE_ITERATIONS = 200


@dataclass
class LocalSolveConfig:
    max_iterations: int = 3000
    gradient_tolerance: float = 1e-6
    time_limit: float | None = 20.0
    #: L-BFGS memory and max line-search steps
    memory: int = 10
    max_line_search: int = 40
    ftol: float = 1e-15

    def __post_init__(self):
        if self.max_iterations <= 0 or self.gradient_tolerance <= 0 or self.memory <= 0:
            raise IdgpError("local solve parameters must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise IdgpError("time_limit must be positive")


@dataclass
class LocalResult:
    z: np.ndarray
    x: np.ndarray
    value: float
    converged: bool
    iterations: int
    #: merit values per penalty round, each starting at the round's initial point
    trace: list[list[float]]
    seconds: float


def local_descent(
    merit: MeritFunction,
    x0: np.ndarray,
    config: LocalSolveConfig | None = None,
    box: BoxBounds | None = None,
) -> LocalResult:
    """Bound-constrained quasi-Newton descent on ``merit`` from ``x0``.

    ``x0`` is either an ``(n, K)`` realization (auxiliaries are lifted from
    it) or a full flat variable vector. Penalized merits run the ``mu``
    schedule with warm starts. The returned point is never worse than the
    start under the final merit; its coordinates are clamped to the box and
    recentered.
    """
    config = config or LocalSolveConfig()
    box = box or default_box(merit.instance)
    t0 = time.perf_counter()
    z0 = np.asarray(x0, dtype=float)
    z0 = z0.copy() if z0.ndim == 1 and z0.size == merit.n_vars else merit.lift(z0)
    bounds = merit.bounds(box)
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    z0 = np.clip(z0, lo, hi)
    f0 = merit.value(z0)
    if not np.isfinite(f0):
        raise IdgpError("merit is not finite at the starting point")

    schedule = PENALTY_SCHEDULE if merit.penalized else (merit.mu,)
    z = z0
    trace = []
    iterations = 0
    converged = False
    deadline = None if config.time_limit is None else t0 + config.time_limit
    current = merit
    for mu in schedule:
        current = merit.with_mu(mu) if merit.penalized else merit
        z, its, converged, round_trace, timed_out = _lbfgs(current, z, bounds, config, deadline)
        iterations += its
        trace.append(round_trace)
        if timed_out:
            break

    final_value = current.value(z)
    start_value = current.value(z0)
    if not final_value <= start_value:
        z, final_value = z0, start_value

    z = np.clip(z, lo, hi)
    X = current.coordinates(z)
    X -= X.mean(axis=0)
    final_value = current.value(z)
    return LocalResult(
        z=z,
        x=current.coordinates(z).copy(),
        value=final_value,
        converged=converged,
        iterations=iterations,
        trace=trace,
        seconds=time.perf_counter() - t0,
    )


def _lbfgs(merit, z0, bounds, config, deadline):
    trace = [merit.value(z0)]

    def fun(z):
        f, g = merit.value_and_grad(z)
        return f, merit.project(g)

    def callback(intermediate_result):
        trace.append(float(intermediate_result.fun))
        if deadline is not None and time.perf_counter() > deadline:
            raise StopIteration

    res = minimize(
        fun,
        z0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        callback=callback,
        options={
            "maxiter": config.max_iterations,
            "gtol": config.gradient_tolerance,
            "ftol": config.ftol,
            "maxcor": config.memory,
            "maxls": config.max_line_search,
        },
    )
    z = res.x
    timed_out = deadline is not None and time.perf_counter() > deadline
    pg = _projected_gradient_norm(merit, z, bounds)
    return z, int(res.nit), pg <= config.gradient_tolerance, trace, timed_out


def _projected_gradient_norm(merit, z, bounds) -> float:
    g = merit.project(merit.gradient(z))
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    step = np.clip(z - g, lo, hi) - z
    return float(np.max(np.abs(step))) if step.size else 0.0


# ---------------------------------------------------------------------------
# reports


@dataclass
class SolveReport:
    solver: str
    formulation: str
    seed: int
    phi: float
    psi: float
    cpu_seconds: float
    iterations: int
    realization: np.ndarray = field(repr=False)
    demi: float | None = None
    local_seconds: float = 0.0
    local_solves: int = 0
    status: str = "ok"
    trace: list[float] = field(default_factory=list, repr=False)

    @property
    def heuristic_seconds(self) -> float:
        return max(0.0, self.cpu_seconds - self.local_seconds)

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "formulation": self.formulation,
            "seed": self.seed,
            "phi": self.phi,
            "psi": self.psi,
            "demi": self.demi,
            "cpu_seconds": self.cpu_seconds,
            "local_seconds": self.local_seconds,
            "heuristic_seconds": self.heuristic_seconds,
            "iterations": self.iterations,
            "local_solves": self.local_solves,
            "status": self.status,
            "trace": self.trace,
            "realization": self.realization.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def csv_row(self, instance_name: str) -> list:
        return [
            instance_name,
            self.solver,
            self.formulation,
            self.seed,
            repr(self.phi),
            repr(self.psi),
            "" if self.demi is None else repr(self.demi),
            f"{self.cpu_seconds:.3f}",
            self.status,
        ]

    def to_csv(self, instance_name: str) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(self.csv_row(instance_name))
        return buf.getvalue()


def restart_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, restart index), schedule-independent."""
    return np.random.default_rng([int(seed), int(index)])


def _sample_box(rng, shape, box: BoxBounds) -> np.ndarray:
    return rng.uniform(box.lo, box.hi, size=shape)


def _phi_psi(instance, x):
    err = edge_errors(instance, x)
    return float(err.mean()), float(err.max())


@dataclass
class Budget:
    """Stopping rule for the global heuristics.

    ``time_limit`` is total wall-clock seconds (local descents included);
    ``max_local`` bounds the number of local descents. At least one must be
    set; use only ``max_local`` for reproducible runs.
    """

    time_limit: float | None = 20.0
    max_local: int | None = None

    def __post_init__(self):
        if self.time_limit is None and self.max_local is None:
            raise IdgpError("budget needs a time limit or a local-search count")
        if (self.time_limit is not None and self.time_limit <= 0) or (
            self.max_local is not None and self.max_local <= 0
        ):
            raise IdgpError("budget must be positive")


class _Clock:
    def __init__(self, budget: Budget):
        self.budget = budget
        self.start = time.perf_counter()
        self.local_seconds = 0.0
        self.local_solves = 0

    def record(self, result: LocalResult) -> None:
        self.local_seconds += result.seconds
        self.local_solves += 1

    def exhausted(self) -> bool:
        b = self.budget
        if b.max_local is not None and self.local_solves >= b.max_local:
            return True
        return b.time_limit is not None and self.elapsed() >= b.time_limit

    def elapsed(self) -> float:
        return time.perf_counter() - self.start


def _local_config(config, budget):
    if config is not None:
        return config
    if budget.time_limit is None:
        return LocalSolveConfig(time_limit=None)
    return LocalSolveConfig()


def multistart(
    instance: IdgpInstance,
    formulation: str | MeritFunction = "idgp1",
    budget: Budget | None = None,
    seed: int = 0,
    config: LocalSolveConfig | None = None,
) -> SolveReport:
    """Local descents from uniform random starts in the box; keep the best average error."""
    budget = budget or Budget()
    merit = build_formulation(instance, formulation) if isinstance(formulation, str) else formulation
    config = _local_config(config, budget)
    box = default_box(instance)
    clock = _Clock(budget)
    best = None
    trace = []
    index = 0
    while True:
        rng = restart_rng(seed, index)
        start = _sample_box(rng, (instance.n, instance.K), box)
        res = local_descent(merit, start, config, box)
        clock.record(res)
        ph, ps = _phi_psi(instance, res.x)
        if best is None or ph < best[0]:
            best = (ph, ps, res.x)
        trace.append(best[0])
        index += 1
        if best[0] < SOLVED_PHI or clock.exhausted():
            break
    return SolveReport(
        solver="ms",
        formulation=merit.formulation,
        seed=seed,
        phi=best[0],
        psi=best[1],
        cpu_seconds=clock.elapsed(),
        iterations=index,
        realization=best[2],
        local_seconds=clock.local_seconds,
        local_solves=clock.local_solves,
        trace=trace,
    )


def vns(
    instance: IdgpInstance,
    formulation: str | MeritFunction = "idgp1",
    budget: Budget | None = None,
    seed: int = 0,
    config: LocalSolveConfig | None = None,
    kmax: int = VNS_KMAX,
    local_searches: int = VNS_LOCAL_SEARCHES,
) -> SolveReport:
    """Variable neighbourhood search over nested boxes around the incumbent.

    Neighbourhood ``k`` is the box of half-width ``(k/kmax) * (hi - lo) / 2``
    around the incumbent (intersected with the global box). Up to
    ``local_searches`` descents are tried per neighbourhood; an improvement
    moves the incumbent and resets ``k`` to 1, otherwise ``k`` grows and wraps
    back to 1 after ``kmax``.
    """
    budget = budget or Budget()
    merit = build_formulation(instance, formulation) if isinstance(formulation, str) else formulation
    config = _local_config(config, budget)
    box = default_box(instance)
    clock = _Clock(budget)
    probe = 0

    def descend(start):
        nonlocal probe
        probe += 1
        res = local_descent(merit, start, config, box)
        clock.record(res)
        return res

    rng = restart_rng(seed, 0)
    res = descend(_sample_box(rng, (instance.n, instance.K), box))
    inc_x = res.x
    inc_phi, inc_psi = _phi_psi(instance, inc_x)
    trace = [inc_phi]
    k = 1
    outer = 0
    half = 0.5 * (box.hi - box.lo)
    while inc_phi >= SOLVED_PHI and not clock.exhausted():
        outer += 1
        radius = (k / kmax) * half
        improved = False
        for _ in range(local_searches):
            rng = restart_rng(seed, probe)
            lo = np.maximum(inc_x - radius, box.lo)
            hi = np.minimum(inc_x + radius, box.hi)
            start = rng.uniform(lo, hi)
            res = descend(start)
            ph, ps = _phi_psi(instance, res.x)
            if ph < inc_phi:
                inc_x, inc_phi, inc_psi = res.x, ph, ps
                improved = True
                break
            if clock.exhausted():
                break
        trace.append(inc_phi)
        k = 1 if improved else (k % kmax) + 1
    return SolveReport(
        solver="vns",
        formulation=merit.formulation,
        seed=seed,
        phi=inc_phi,
        psi=inc_psi,
        cpu_seconds=clock.elapsed(),
        iterations=outer,
        realization=inc_x,
        local_seconds=clock.local_seconds,
        local_solves=clock.local_solves,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# multiplicative weights update


def weight_update(omega: np.ndarray, psi: np.ndarray, eta: float) -> np.ndarray:
    return np.asarray(omega, dtype=float) * (1.0 - eta * np.asarray(psi, dtype=float))


def scaled_errors(instance: IdgpInstance, x: np.ndarray) -> np.ndarray:
    """Edge errors divided by their maximum (all zeros when every edge is satisfied)."""
    err = edge_errors(instance, x)
    top = err.max()
    if top <= 0.0:
        return np.zeros_like(err)
    out = err / top
    out[err == top] = 1.0
    return out


THETA_RULES = ("figure", "text")


def theta_sample(
    instance: IdgpInstance,
    x: np.ndarray,
    omega: np.ndarray,
    psi: np.ndarray,
    rule: str = "figure",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Uniform sample between 0 and ``omega_e [psi_e] (x_u - x_v)`` per edge and axis."""
    if rule not in THETA_RULES:
        raise IdgpError(f"unknown theta rule {rule!r}")
    rng = rng or np.random.default_rng()
    diff = x[instance.u] - x[instance.v]
    scale = omega * psi if rule == "figure" else np.asarray(omega, dtype=float)
    a = scale[:, None] * diff
    return a * rng.random(a.shape)


@dataclass
class MwuState:
    omega: np.ndarray
    eta: float
    T: int
    psi_trace: list[np.ndarray] = field(default_factory=list)
    rho_trace: list[np.ndarray] = field(default_factory=list)
    Omega_trace: list[float] = field(default_factory=list)
    incumbent: np.ndarray | None = None
    incumbent_Omega: float = math.inf
    skipped: list[int] = field(default_factory=list)
    solved: bool = False

    @property
    def rho(self) -> np.ndarray:
        return self.omega / self.omega.sum()

    def regret_bound(self) -> float:
        """Right-hand side of the MWU guarantee on ``min_t Omega^t``."""
        T = len(self.psi_trace)
        m = len(self.omega)
        cumulative = np.sum(self.psi_trace, axis=0)
        return (math.log(m) / self.eta + (1.0 + self.eta) * float(cumulative.min())) / T

    def bound_holds(self, slack: float = 1e-12) -> bool:
        if not self.Omega_trace:
            return True
        return min(self.Omega_trace) <= self.regret_bound() + slack


def mwu(
    instance: IdgpInstance,
    eta: float = 0.5,
    T: int = 50,
    seed: int = 0,
    theta_rule: str = "figure",
    config: LocalSolveConfig | None = None,
    pointwise_config: LocalSolveConfig | None = None,
    budget: Budget | None = None,
) -> tuple[SolveReport, MwuState]:
    """Multiplicative weights update over the pointwise reformulation.

    Each iteration samples ``theta`` from the current iterate, solves the
    pointwise convex problem, refines with a local descent on the penalty
    merit, scores the new iterate by its scaled errors, and updates the
    weights. The incumbent is the iterate with the smallest weighted scaled
    error ``Omega``; the run stops early once the average error falls below
    ``1e-6``.
    """
    if not 0.0 < eta <= 0.5:
        raise IdgpError(f"eta must lie in (0, 1/2], got {eta}")
    if T < 1:
        raise IdgpError(f"T must be >= 1, got {T}")
    t_start = time.perf_counter()
    budget = budget or Budget(time_limit=None, max_local=10**9)
    config = config or LocalSolveConfig(time_limit=budget.time_limit)
    # the pointwise subproblem only steers the next penalty descent, so a
    # short solve is enough
    pointwise_config = pointwise_config or LocalSolveConfig(
        max_iterations=POINTWISE_ITERATIONS, time_limit=config.time_limit
    )
    box = default_box(instance)
    penalty = PenaltyMerit(instance, "base")
    m = instance.m
    state = MwuState(omega=np.ones(m), eta=eta, T=T)
    local_seconds = 0.0
    local_solves = 0

    rng = restart_rng(seed, 0)
    res = local_descent(penalty, _sample_box(rng, (instance.n, instance.K), box), config, box)
    local_seconds += res.seconds
    local_solves += 1
    x = res.x
    psi_prev = scaled_errors(instance, x)
    state.incumbent = x
    state.incumbent_Omega = float(psi_prev @ state.rho)
    best_phi = _phi_psi(instance, x)[0]
    trace = [state.incumbent_Omega]

    t = 0
    if best_phi >= SOLVED_PHI:
        for t in range(1, T + 1):
            rho = state.rho
            theta = theta_sample(instance, x, state.omega, psi_prev, theta_rule, rng)
            try:
                pw = local_descent(PointwiseMerit(instance, theta), x, pointwise_config, box)
                local_seconds += pw.seconds
                local_solves += 1
                if not np.all(np.isfinite(pw.x)):
                    raise IdgpError("non-finite pointwise solution")
                res = local_descent(penalty, pw.x, config, box)
                local_seconds += res.seconds
                local_solves += 1
                x = res.x
                psi_t = scaled_errors(instance, x)
            except IdgpError as exc:
                log.warning("MWU iteration %d skipped: %s", t, exc)
                state.skipped.append(t)
                psi_t = psi_prev
            Omega = float(psi_t @ rho)
            state.psi_trace.append(psi_t)
            state.rho_trace.append(rho)
            state.Omega_trace.append(Omega)
            if Omega < state.incumbent_Omega:
                state.incumbent, state.incumbent_Omega = x, Omega
            trace.append(state.incumbent_Omega)
            phi_t = _phi_psi(instance, x)[0]
            if phi_t < SOLVED_PHI:
                state.incumbent, state.incumbent_Omega = x, Omega
                state.solved = True
                break
            state.omega = weight_update(state.omega, psi_t, eta)
            psi_prev = psi_t
            if budget.time_limit is not None and time.perf_counter() - t_start > budget.time_limit:
                break
    else:
        state.solved = True

    if not state.bound_holds():
        raise AssertionError(
            f"MWU guarantee violated: min Omega {min(state.Omega_trace)} > bound {state.regret_bound()}"
        )
    ph, ps = _phi_psi(instance, state.incumbent)
    report = SolveReport(
        solver="mwu",
        formulation="imwu",
        seed=seed,
        phi=ph,
        psi=ps,
        cpu_seconds=time.perf_counter() - t_start,
        iterations=len(state.Omega_trace),
        realization=state.incumbent,
        local_seconds=local_seconds,
        local_solves=local_solves,
        trace=trace,
        status="ok" if not state.skipped else f"skipped:{len(state.skipped)}",
    )
    return report, state


SUPPORTED = {
    "ms": {"idgp1", "idgp1var1", "idgp1var2", "idgp1var3", "idgp1sqrt", "idgp3", "idgp3sqrt", "idgp4", "idgp4var1", "stress"},
    "vns": {"idgp1", "idgp1var1", "idgp1var2", "idgp1var3", "idgp1sqrt", "idgp3", "idgp3sqrt", "idgp4", "idgp4var1", "stress"},
    "mwu": {"imwu"},
}


def check_combination(solver: str, formulation: str) -> None:
    from .errors import UnsupportedCombinationError

    if solver not in SUPPORTED:
        raise UnsupportedCombinationError(f"unknown solver {solver!r}; choose from {', '.join(SUPPORTED)}")
    if formulation not in SUPPORTED[solver]:
        raise UnsupportedCombinationError(
            f"solver {solver!r} does not run formulation {formulation!r}; "
            f"supported: {', '.join(sorted(SUPPORTED[solver]))}"
        )


def solve(
    instance: IdgpInstance,
    solver: str,
    formulation: str,
    seed: int = 0,
    budget: Budget | None = None,
    eta: float = 0.5,
    T: int = 50,
    theta_rule: str = "figure",
) -> SolveReport:
    """Dispatch a single solver/formulation run."""
    check_combination(solver, formulation)
    budget = budget or Budget()
    if solver == "ms":
        return multistart(instance, formulation, budget, seed)
    if solver == "vns":
        return vns(instance, formulation, budget, seed)
    report, _ = mwu(instance, eta=eta, T=T, seed=seed, theta_rule=theta_rule, budget=budget)
    return report
