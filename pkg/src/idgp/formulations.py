"""Smooth merit functions for the iDGP formulations.

Every formulation is compiled into a :class:`MeritFunction` over a flat
variable vector ``z``. The first ``n*K`` entries are the coordinates (row
major, vertex by vertex); formulations with auxiliary variables append named
blocks after them.

Constraints are folded into the objective. Hinges ``max(0, t)`` are squared
so that merits are C^1 and keep their exact zero set; the constrained
formulations (square factoring, convexity/concavity, pointwise) weight their
constraint terms by a penalty parameter ``mu`` that the local solver
increases over a few warm-started rounds.
"""

from __future__ import annotations

import copy
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .core import BoxBounds, IdgpInstance
from .errors import IdgpError

SQRT_DELTA = 1e-10
SOFTMAX_RELATIVE_TEMPERATURE = 1e-2


def incidence_matrix(instance: IdgpInstance) -> sp.csr_matrix:
    """Signed edge-vertex incidence ``B`` with ``(B @ x)[e] = x_u - x_v``."""
    m, n = instance.m, instance.n
    rows = np.repeat(np.arange(m), 2)
    cols = np.column_stack([instance.u, instance.v]).ravel()
    vals = np.tile([1.0, -1.0], m)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n))


class MeritFunction:
    """Base class: a smooth scalar function of the flat variable vector."""

    formulation = "merit"
    #: zero exactly on realizations satisfying every interval constraint
    feasibility = True
    #: constraint terms scaled by ``mu`` (solved with an increasing schedule)
    penalized = False

    def __init__(self, instance: IdgpInstance, mu: float = 1.0):
        self.instance = instance
        self.mu = float(mu)
        self._B = incidence_matrix(instance)
        self._BT = self._B.T.tocsr()
        self.n_coords = instance.n * instance.K
        self.blocks: dict[str, tuple[int, tuple[int, ...]]] = {}

    # -- layout --------------------------------------------------------------

    def _add_block(self, name: str, shape: tuple[int, ...]) -> None:
        self.blocks[name] = (self.n_vars, shape)

    @property
    def n_vars(self) -> int:
        return self.n_coords + sum(int(np.prod(s)) for _, s in self.blocks.values())

    def coordinates(self, z: np.ndarray) -> np.ndarray:
        return z[: self.n_coords].reshape(self.instance.n, self.instance.K)

    extract = coordinates

    def block(self, z: np.ndarray, name: str) -> np.ndarray:
        off, shape = self.blocks[name]
        return z[off : off + int(np.prod(shape))].reshape(shape)

    def lift(self, x: np.ndarray) -> np.ndarray:
        """Full variable vector for coordinates ``x`` with consistent auxiliaries."""
        return np.asarray(x, dtype=float).ravel().copy()

    def bounds(self, box: BoxBounds) -> list[tuple[float | None, float | None]]:
        return [(box.lo, box.hi)] * self.n_vars

    def project(self, g: np.ndarray) -> np.ndarray:
        """Remove the per-axis mean of the coordinate gradient (translation gauge)."""
        g = np.array(g, dtype=float)
        G = g[: self.n_coords].reshape(self.instance.n, self.instance.K)
        G -= G.mean(axis=0)
        return g

    def with_mu(self, mu: float) -> "MeritFunction":
        other = copy.copy(self)
        other.mu = float(mu)
        return other

    # -- evaluation ----------------------------------------------------------

    def value_and_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def value(self, z: np.ndarray) -> float:
        return self.value_and_grad(z)[0]

    def gradient(self, z: np.ndarray) -> np.ndarray:
        return self.value_and_grad(z)[1]

    __call__ = value

    def _differences(self, z: np.ndarray) -> np.ndarray:
        return self._B @ self.coordinates(z)

    def _scatter(self, per_edge: np.ndarray) -> np.ndarray:
        """Coordinate gradient of ``sum_e per_edge[e] . (x_u - x_v)``."""
        return np.asarray(self._BT @ per_edge).ravel()

    def __repr__(self):
        return f"{type(self).__name__}({self.formulation!r}, n_vars={self.n_vars}, mu={self.mu:g})"


def _check_weights(weights, m: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (m,):
        raise IdgpError(f"expected {m} edge weights, got shape {w.shape}")
    if not np.all(w > 0):
        raise IdgpError("edge weights must be strictly positive")
    return w


def default_weights(instance: IdgpInstance) -> np.ndarray:
    """``1/U^2`` per edge (1 where ``U == 0``)."""
    U2 = instance.upper**2
    return np.where(U2 > 0, 1.0 / np.where(U2 > 0, U2, 1.0), 1.0)


class _DistanceTerms:
    """Squared distances or their smoothed square roots, with matching bounds."""

    def __init__(self, instance: IdgpInstance, sqrt: bool):
        self.sqrt = sqrt
        if sqrt:
            self.lo, self.hi = instance.lower, instance.upper
        else:
            self.lo, self.hi = instance.lower**2, instance.upper**2

    def __call__(self, diff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``q`` per edge and ``dq/d(x_u - x_v)`` per edge."""
        d2 = np.einsum("ek,ek->e", diff, diff)
        if self.sqrt:
            q = np.sqrt(d2 + SQRT_DELTA)
            return q, diff / q[:, None]
        return d2, 2.0 * diff


class PenaltyMerit(MeritFunction):
    """Penalty minimization with the slacks eliminated.

    ``variant`` is one of ``base``, ``max``, ``split``, ``weighted`` or
    ``stress``. Per edge the lower and upper hinges are
    ``hL = max(0, L^2 - d^2)`` and ``hU = max(0, d^2 - U^2)``.
    """

    VARIANTS = {
        "base": "idgp1",
        "max": "idgp1var1",
        "split": "idgp1var2",
        "weighted": "idgp1var3",
        "stress": "stress",
    }

    def __init__(self, instance: IdgpInstance, variant: str = "base", weights=None, sqrt: bool = False):
        if variant not in self.VARIANTS:
            raise IdgpError(f"unknown penalty variant {variant!r}")
        super().__init__(instance)
        self.variant = variant
        self.sqrt = sqrt
        self.formulation = self.VARIANTS[variant] + ("sqrt" if sqrt else "")
        self._terms = _DistanceTerms(instance, sqrt)
        self.weights = None
        if variant == "weighted":
            self.weights = _check_weights(default_weights(instance) if weights is None else weights, instance.m)
        elif weights is not None:
            raise IdgpError(f"variant {variant!r} takes no weights")

    def edge_terms(self, z: np.ndarray):
        diff = self._differences(z)
        q, dq = self._terms(diff)
        hL = np.maximum(0.0, self._terms.lo - q)
        hU = np.maximum(0.0, q - self._terms.hi)
        return diff, q, dq, hL, hU

    def value_and_grad(self, z):
        _, _, dq, hL, hU = self.edge_terms(z)
        if self.variant == "base":
            s = np.maximum(hL, hU)
            t = s * s
        else:
            t = hL * hL + hU * hU
        dt = 2.0 * (hU - hL)
        if self.variant == "weighted":
            f = float(self.weights @ t)
            coef = self.weights * dt
        elif self.variant == "max":
            f, dfdt = _soft_max(t)
            coef = dfdt * dt
        else:
            f = float(t.sum())
            coef = dt
        return f, self._scatter(coef[:, None] * dq)


def _soft_max(t: np.ndarray) -> tuple[float, np.ndarray]:
    """Log-sum-exp with temperature proportional to ``max(t)``, and its gradient.

    ``f(t) = c M log sum exp(t_e / (c M))`` with ``M = max(t)``; ``f`` is
    positively homogeneous, bounded by ``M <= f <= M (1 + c log m)``.
    """
    M = float(t.max()) if t.size else 0.0
    if M <= 0.0:
        return 0.0, np.zeros_like(t)
    c = SOFTMAX_RELATIVE_TEMPERATURE
    r = (t - M) / (c * M)
    ex = np.exp(r)
    S = ex.sum()
    p = ex / S
    lse = np.log(S) + 1.0 / c  # log sum exp(t / (cM))
    f = c * M * lse
    grad = p.copy()
    # derivative through the temperature, carried by the (unique) argmax
    grad[int(np.argmax(t))] += c * lse - float(p @ t) / M
    return f, grad


class SquareFactoringMerit(MeritFunction):
    """Square factoring: auxiliary ``sigma``, ``tau`` replace the squared norm.

    ``sum (sigma - tau)^2 + mu [ sum (x_u - x_v - sigma)^2
    + sum hinge^2(L^2 - sigma.tau) + sum hinge^2(sigma.tau - U^2) ]``
    """

    penalized = True

    def __init__(self, instance: IdgpInstance, mu: float = 1.0, sqrt: bool = False):
        super().__init__(instance, mu)
        self.sqrt = sqrt
        self.formulation = "idgp3sqrt" if sqrt else "idgp3"
        if sqrt:
            self._lo, self._hi = instance.lower, instance.upper
        else:
            self._lo, self._hi = instance.lower**2, instance.upper**2
        self._add_block("sigma", (instance.m, instance.K))
        self._add_block("tau", (instance.m, instance.K))

    def lift(self, x):
        diff = self._B @ np.asarray(x, dtype=float)
        return np.concatenate([np.asarray(x, dtype=float).ravel(), diff.ravel(), diff.ravel()])

    def value_and_grad(self, z):
        diff = self._differences(z)
        sig = self.block(z, "sigma")
        tau = self.block(z, "tau")
        p = np.einsum("ek,ek->e", sig, tau)
        if self.sqrt:
            pp = np.maximum(p, 0.0)
            q = np.sqrt(pp + SQRT_DELTA)
            dqdp = np.where(p > 0.0, 0.5 / q, 0.0)
        else:
            q, dqdp = p, np.ones_like(p)
        gap = sig - tau
        res = diff - sig
        hL = np.maximum(0.0, self._lo - q)
        hU = np.maximum(0.0, q - self._hi)
        mu = self.mu
        f = float(np.sum(gap * gap) + mu * (np.sum(res * res) + hL @ hL + hU @ hU))
        dp = (mu * 2.0 * (hU - hL) * dqdp)[:, None]
        g_x = self._scatter(2.0 * mu * res)
        g_sig = 2.0 * gap - 2.0 * mu * res + dp * tau
        g_tau = -2.0 * gap + dp * sig
        return f, np.concatenate([g_x, g_sig.ravel(), g_tau.ravel()])


class ConvexConcaveMerit(MeritFunction):
    """Maximize the (weighted) sum of squared edge lengths under the upper bounds.

    Encoded as minimization of ``-sum w_e d_e^2 + mu sum hinge^2(d_e^2 - U_e^2)``.
    This relaxes the lower bounds, so the merit is not a feasibility measure.
    """

    feasibility = False
    penalized = True

    def __init__(self, instance: IdgpInstance, weights=None, mu: float = 1.0, sqrt: bool = False):
        super().__init__(instance, mu)
        self.sqrt = sqrt
        self.weighted = weights is not None
        self.weights = np.ones(instance.m) if weights is None else _check_weights(weights, instance.m)
        self.formulation = ("idgp4var1" if self.weighted else "idgp4") + ("sqrt" if sqrt else "")
        self._terms = _DistanceTerms(instance, sqrt)

    def value_and_grad(self, z):
        diff = self._differences(z)
        q, dq = self._terms(diff)
        hU = np.maximum(0.0, q - self._terms.hi)
        f = float(-self.weights @ q + self.mu * (hU @ hU))
        coef = -self.weights + 2.0 * self.mu * hU
        return f, self._scatter(coef[:, None] * dq)


class PointwiseMerit(MeritFunction):
    """Always-feasible pointwise reformulation for fixed parameters ``theta``.

    Maximizes ``sum_e (theta_e . (x_u - x_v) - s_e)`` subject to
    ``d_e^2 <= U_e^2``, ``theta_e . (x_u - x_v) >= L_e^2 - s_e`` and
    ``s >= 0``; minimized here as the negated objective plus ``mu``-weighted
    squared hinges. The problem is convex in ``(x, s)``.
    """

    penalized = True
    feasibility = False
    formulation = "imwu"

    def __init__(self, instance: IdgpInstance, theta, mu: float = 1.0):
        super().__init__(instance, mu)
        theta = np.array(theta, dtype=float)
        if theta.shape != (instance.m, instance.K):
            raise IdgpError(f"theta must have shape {(instance.m, instance.K)}, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise IdgpError("theta must be finite")
        theta.setflags(write=False)
        self.theta = theta
        self._L2 = instance.lower**2
        self._U2 = instance.upper**2
        self._add_block("s", (instance.m,))

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        lin = np.einsum("ek,ek->e", self.theta, self._B @ x)
        return np.concatenate([x.ravel(), np.maximum(0.0, self._L2 - lin)])

    def bounds(self, box):
        return [(box.lo, box.hi)] * self.n_coords + [(0.0, None)] * self.instance.m

    def value_and_grad(self, z):
        diff = self._differences(z)
        s = self.block(z, "s")
        lin = np.einsum("ek,ek->e", self.theta, diff)
        d2 = np.einsum("ek,ek->e", diff, diff)
        hU = np.maximum(0.0, d2 - self._U2)
        hL = np.maximum(0.0, self._L2 - s - lin)
        mu = self.mu
        f = float(np.sum(s - lin) + mu * (hU @ hU + hL @ hL))
        coef_lin = -1.0 - 2.0 * mu * hL
        per_edge = coef_lin[:, None] * self.theta + (4.0 * mu * hU)[:, None] * diff
        g_s = 1.0 - 2.0 * mu * hL
        return f, np.concatenate([self._scatter(per_edge), g_s])

    def slack(self, z) -> np.ndarray:
        return self.block(z, "s")


# ---------------------------------------------------------------------------
# builders


def build_penalty_merit(instance: IdgpInstance, variant: str = "base", weights=None) -> PenaltyMerit:
    return PenaltyMerit(instance, variant, weights)


def build_sqrt_variant(merit: MeritFunction) -> MeritFunction:
    """The same formulation with distances in place of squared distances."""
    inst = merit.instance
    if isinstance(merit, PenaltyMerit):
        return PenaltyMerit(inst, merit.variant, merit.weights, sqrt=True)
    if isinstance(merit, SquareFactoringMerit):
        return SquareFactoringMerit(inst, merit.mu, sqrt=True)
    if isinstance(merit, ConvexConcaveMerit):
        return ConvexConcaveMerit(inst, merit.weights if merit.weighted else None, merit.mu, sqrt=True)
    raise IdgpError(f"{merit.formulation} has no square root variant")


def build_square_factoring_merit(instance: IdgpInstance) -> SquareFactoringMerit:
    return SquareFactoringMerit(instance)


def build_convconc_merit(instance: IdgpInstance, weighted: bool = False, weights=None) -> ConvexConcaveMerit:
    if weighted and weights is None:
        weights = default_weights(instance)
    elif not weighted and weights is not None:
        raise IdgpError("weights given for the unweighted convexity/concavity formulation")
    return ConvexConcaveMerit(instance, weights)


def build_stress_merit(instance: IdgpInstance) -> PenaltyMerit:
    return PenaltyMerit(instance, "stress")


def build_pointwise(instance: IdgpInstance, theta) -> PointwiseMerit:
    return PointwiseMerit(instance, theta)


FORMULATIONS: dict[str, Callable[[IdgpInstance], MeritFunction]] = {
    "idgp1": lambda inst: PenaltyMerit(inst, "base"),
    "idgp1var1": lambda inst: PenaltyMerit(inst, "max"),
    "idgp1var2": lambda inst: PenaltyMerit(inst, "split"),
    "idgp1var3": lambda inst: PenaltyMerit(inst, "weighted"),
    "idgp1sqrt": lambda inst: PenaltyMerit(inst, "base", sqrt=True),
    "idgp3": lambda inst: SquareFactoringMerit(inst),
    "idgp3sqrt": lambda inst: SquareFactoringMerit(inst, sqrt=True),
    "idgp4": lambda inst: build_convconc_merit(inst),
    "idgp4var1": lambda inst: build_convconc_merit(inst, weighted=True),
    "stress": build_stress_merit,
}


def build_formulation(instance: IdgpInstance, formulation: str) -> MeritFunction:
    try:
        builder = FORMULATIONS[formulation]
    except KeyError:
        raise IdgpError(
            f"unknown formulation {formulation!r}; choose from {', '.join(sorted(FORMULATIONS))}"
        ) from None
    return builder(instance)
