import numpy as np
import pytest

from conftest import fd_gradient
from idgp.core import IdgpInstance, default_box
from idgp.errors import IdgpError
from idgp.formulations import (
    FORMULATIONS,
    PenaltyMerit,
    PointwiseMerit,
    build_convconc_merit,
    build_formulation,
    build_penalty_merit,
    build_pointwise,
    build_sqrt_variant,
    build_square_factoring_merit,
    build_stress_merit,
)
from idgp.gen import random_feasible_instance
from idgp.measures import edge_errors
from idgp.solvers import LocalSolveConfig, local_descent

INST = random_feasible_instance(8, 3, 0.15, seed=11)


def all_merits(inst):
    rng = np.random.default_rng(0)
    theta = rng.normal(size=(inst.m, inst.K))
    merits = {name: build(inst) for name, build in FORMULATIONS.items()}
    merits["pointwise"] = PointwiseMerit(inst, theta)
    return merits


def random_point(merit, rng):
    x = merit.instance.reference + rng.normal(scale=0.5, size=merit.instance.reference.shape)
    z = merit.lift(x)
    z[merit.n_coords :] += rng.normal(scale=0.3, size=z.size - merit.n_coords)
    if isinstance(merit, PointwiseMerit):
        z[merit.n_coords :] = np.abs(z[merit.n_coords :])
    return z


@pytest.mark.parametrize("name", sorted(all_merits(INST)))
@pytest.mark.parametrize("mu", [1.0, 100.0])
def test_gradient_matches_finite_differences(name, mu):
    merit = all_merits(INST)[name]
    merit = merit.with_mu(mu) if merit.penalized else merit
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(5):
        z = random_point(merit, rng)
        g = merit.gradient(z)
        fd = fd_gradient(merit.value, z)
        scale = max(np.linalg.norm(fd), 1.0)
        # the analytic gradient is compared before the translation projection
        assert np.linalg.norm(g - fd) / scale <= 1e-5


@pytest.mark.parametrize("name", sorted(n for n in FORMULATIONS if FORMULATIONS[n](INST).feasibility))
def test_feasibility_merit_zero_exactly_at_valid_points(name):
    merit = build_formulation(INST, name)
    z = merit.lift(INST.reference)
    f, g = merit.value_and_grad(z)
    assert f == pytest.approx(0.0, abs=1e-12)
    assert np.max(np.abs(g)) <= 1e-9
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = INST.reference + rng.normal(scale=0.3, size=INST.reference.shape)
        bad = bool(np.any(edge_errors(INST, x) > 1e-9))
        assert (merit.value(merit.lift(x)) > 1e-14) == bad


def test_single_edge_base_merit():
    inst = IdgpInstance(2, 1, [(1, 2, 1, 1)])
    merit = build_penalty_merit(inst)
    assert merit.value(np.array([0.0, 2.0])) == pytest.approx(9.0)


def test_stress_equals_squared_residual_when_exact(rng):
    inst = IdgpInstance(3, 2, [(1, 2, 1, 1), (2, 3, 2, 2), (1, 3, 2.5, 2.5)])
    merit = build_stress_merit(inst)
    for _ in range(10):
        x = rng.normal(size=(3, 2))
        d2 = np.sum((x[inst.u] - x[inst.v]) ** 2, axis=1)
        assert merit.value(x.ravel()) == pytest.approx(np.sum((d2 - inst.upper**2) ** 2))


def test_weighted_variant_rejects_bad_weights():
    with pytest.raises(IdgpError):
        PenaltyMerit(INST, "weighted", weights=np.zeros(INST.m))
    with pytest.raises(IdgpError):
        build_convconc_merit(INST, weighted=False, weights=np.ones(INST.m))


def test_unknown_formulation():
    with pytest.raises(IdgpError):
        build_formulation(INST, "nope")


def test_sqrt_variant_and_coincident_points():
    merit = build_sqrt_variant(build_penalty_merit(INST))
    assert merit.formulation == "idgp1sqrt"
    assert merit.value(merit.lift(INST.reference)) == pytest.approx(0.0, abs=1e-9)
    g = merit.gradient(np.zeros(merit.n_vars))
    assert np.all(np.isfinite(g))
    assert build_sqrt_variant(build_square_factoring_merit(INST)).formulation == "idgp3sqrt"


def test_square_factoring_identity():
    merit = build_square_factoring_merit(INST)
    z = merit.lift(INST.reference)
    sig, tau = merit.block(z, "sigma"), merit.block(z, "tau")
    d2 = np.sum((INST.reference[INST.u] - INST.reference[INST.v]) ** 2, axis=1)
    assert np.allclose(np.einsum("ek,ek->e", sig, tau), d2)
    assert merit.value(z) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(merit.coordinates(z), INST.reference)


def test_convconc_behaviour():
    merit = build_convconc_merit(INST)
    assert merit.value(np.zeros(merit.n_vars)) == 0.0
    x = INST.reference.copy()
    base = merit.with_mu(1e3).value(x.ravel())
    x[-1] *= 10
    stretched = merit.with_mu(1e3)
    d2 = np.sum((x[INST.u] - x[INST.v]) ** 2, axis=1)
    assert np.any(d2 > INST.upper**2)
    assert stretched.value(x.ravel()) > base


def test_projected_gradient_sums_to_zero(rng):
    for merit in all_merits(INST).values():
        z = random_point(merit, rng)
        G = merit.project(merit.gradient(z))[: merit.n_coords].reshape(INST.n, INST.K)
        assert np.allclose(G.sum(axis=0), 0.0, atol=1e-12)


def test_edge_permutation_invariance(rng):
    perm = rng.permutation(INST.m)
    edges = INST.edges
    shuffled = IdgpInstance(INST.n, INST.K, [edges[i] for i in perm], reference=INST.reference)
    theta = rng.normal(size=(INST.m, INST.K))
    for name in FORMULATIONS:
        a, b = build_formulation(INST, name), build_formulation(shuffled, name)
        x = INST.reference + rng.normal(scale=0.4, size=INST.reference.shape)
        if a.n_vars == a.n_coords:
            assert a.value(x.ravel()) == pytest.approx(b.value(x.ravel()), rel=1e-12, abs=1e-12)
        else:
            assert a.value(a.lift(x)) == pytest.approx(b.value(b.lift(x)), rel=1e-12, abs=1e-12)
    pa = PointwiseMerit(INST, theta)
    pb = PointwiseMerit(shuffled, theta[perm])
    x = INST.reference + 0.1
    assert pa.value(pa.lift(x)) == pytest.approx(pb.value(pb.lift(x)), rel=1e-12)


# -- pointwise subproblem -----------------------------------------------------------


def test_pointwise_exactness_at_theta_star():
    x = INST.reference
    theta = x[INST.u] - x[INST.v]
    merit = build_pointwise(INST, theta)
    z = merit.lift(x)
    assert np.allclose(merit.slack(z), 0.0)
    lin = np.einsum("ek,ek->e", theta, x[INST.u] - x[INST.v])
    assert np.all(lin >= INST.lower**2 - 1e-12)
    d2 = np.sum((x[INST.u] - x[INST.v]) ** 2, axis=1)
    assert np.all(d2 <= INST.upper**2 + 1e-12)
    # every constraint term vanishes, leaving only the linear objective
    assert merit.with_mu(1e6).value(z) == pytest.approx(-lin.sum())


def test_pointwise_theta_zero_slack_is_L_squared():
    merit = build_pointwise(INST, np.zeros((INST.m, INST.K)))
    res = local_descent(merit, INST.reference, LocalSolveConfig(time_limit=None))
    s = merit.slack(res.z)
    mu = 1e4  # last round of the penalty schedule
    assert np.allclose(s, INST.lower**2 - 1.0 / (2 * mu), atol=1e-6)


def test_pointwise_kkt_residual(rng):
    theta = rng.normal(scale=0.3, size=(INST.m, INST.K))
    merit = build_pointwise(INST, theta)
    res = local_descent(merit, INST.reference, LocalSolveConfig(time_limit=None, gradient_tolerance=1e-9))
    final = merit.with_mu(1e4)
    box = default_box(INST)
    bounds = final.bounds(box)
    g = final.project(final.gradient(res.z))
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    step = np.clip(res.z - g, lo, hi) - res.z
    # at mu = 1e4 the line search runs into round-off around 3e-5
    assert np.max(np.abs(step)) <= 1e-4


def test_pointwise_rejects_bad_theta():
    with pytest.raises(IdgpError):
        PointwiseMerit(INST, np.zeros((INST.m, INST.K + 1)))
    with pytest.raises(IdgpError):
        PointwiseMerit(INST, np.full((INST.m, INST.K), np.nan))
