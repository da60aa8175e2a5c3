"""Solution-quality measures: edge errors, cRMSD and DEMI.

All realizations are ``(n, K)`` arrays. Alignment residuals use the sum of
per-point Euclidean norms, while the optimal rotation itself is the classical
least-squares (Kabsch) solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import DmdgpStructure, IdgpInstance
from .errors import DegenerateAnchorError, GroupTooLargeError, InstanceError

GROUP_SIZE_CAP = 24
ANCHOR_RTOL = 1e-9


# ---------------------------------------------------------------------------
# edge errors


def edge_lengths(instance: IdgpInstance, x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x[instance.u] - x[instance.v], axis=1)


def edge_errors(instance: IdgpInstance, x: np.ndarray) -> np.ndarray:
    """Per-edge error vector.

    Interval instances use the two-sided hinge ``max(0, L-d) + max(0, d-U)``;
    exact instances use ``|d - U|``. The two agree whenever ``L == U``.
    """
    d = edge_lengths(instance, x)
    if instance.is_exact:
        return np.abs(d - instance.upper)
    return np.maximum(0.0, instance.lower - d) + np.maximum(0.0, d - instance.upper)


def edge_error(instance: IdgpInstance, x: np.ndarray, edge: int) -> float:
    """Error on the single edge with 0-based index ``edge``."""
    d = float(np.linalg.norm(x[instance.u[edge]] - x[instance.v[edge]]))
    L, U = float(instance.lower[edge]), float(instance.upper[edge])
    if instance.is_exact:
        return abs(d - U)
    return max(0.0, L - d) + max(0.0, d - U)


def phi(instance: IdgpInstance, x: np.ndarray) -> float:
    """Average edge error."""
    if instance.m == 0:
        raise InstanceError("average error is undefined on an instance without edges")
    return float(np.mean(edge_errors(instance, x)))


def psi(instance: IdgpInstance, x: np.ndarray) -> float:
    """Maximum edge error."""
    if instance.m == 0:
        raise InstanceError("maximum error is undefined on an instance without edges")
    return float(np.max(edge_errors(instance, x)))


def delta_naive(x: np.ndarray, y: np.ndarray, instance: IdgpInstance) -> float:
    """Mean absolute difference of edge lengths between two realizations.

    Kept for diagnostics only: it is not invariant under independent rigid
    motions in the way a realization distance should be compared.
    """
    return float(np.mean(np.abs(edge_lengths(instance, x) - edge_lengths(instance, y))))


def centroid(x: np.ndarray) -> np.ndarray:
    """Mean over all vertices."""
    return np.asarray(x, dtype=float).mean(axis=0)


def center(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x - x.mean(axis=0)


def realization_norm(x: np.ndarray) -> float:
    """Sum over points of the Euclidean norm of each point."""
    return float(np.sum(np.linalg.norm(x, axis=1)))


# ---------------------------------------------------------------------------
# rigid alignment


@dataclass
class AlignmentResult:
    """Congruence ``y -> y @ rotation.T + translation`` plus its residual.

    ``group_element`` is the ascending tuple of generator positions applied
    before the congruence (DEMI only; empty for the identity).
    """

    rotation: np.ndarray
    translation: np.ndarray
    residual: float
    reflection: bool = False
    group_element: tuple[int, ...] = ()
    aligned: np.ndarray | None = field(default=None, repr=False)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return y @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.ravel().tolist(),
            "translation": self.translation.tolist(),
            "residual": self.residual,
            "reflection": self.reflection,
            "group_element": list(self.group_element),
        }


def kabsch_rotation(x: np.ndarray, y: np.ndarray, allow_reflection: bool = True) -> np.ndarray:
    """Orthogonal ``R`` minimizing ``sum ||x_i - R y_i||^2`` for centered inputs."""
    H = y.T @ x
    K = H.shape[0]
    if not np.any(H):
        return np.eye(K)
    U, _, Vt = np.linalg.svd(H)
    R = Vt.T @ U.T
    if not allow_reflection and np.linalg.det(R) < 0:
        D = np.eye(K)
        D[-1, -1] = -1.0
        R = Vt.T @ D @ U.T
    return R


def procrustes(x: np.ndarray, y: np.ndarray, allow_reflection: bool = True) -> AlignmentResult:
    """Best congruence mapping ``y`` onto ``x`` (translation matches centroids).

    The residual is reported as a sum of per-point norms.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InstanceError(f"cannot align realizations of shapes {x.shape} and {y.shape}")
    cx, cy = x.mean(axis=0), y.mean(axis=0)
    R = kabsch_rotation(x - cx, y - cy, allow_reflection)
    t = cx - R @ cy
    aligned = y @ R.T + t
    return AlignmentResult(
        rotation=R,
        translation=t,
        residual=realization_norm(x - aligned),
        reflection=bool(np.linalg.det(R) < 0),
        aligned=aligned,
    )


def crmsd(x: np.ndarray, y: np.ndarray, allow_reflection: bool = True) -> float:
    return procrustes(center(x), center(y), allow_reflection).residual


# ---------------------------------------------------------------------------
# partial reflections and the pruning group


def _reflector(anchors: np.ndarray, vertex: int):
    """Return ``(origin, normal)`` of the hyperplane through ``anchors`` (K x K)."""
    K = anchors.shape[1]
    origin = anchors[0]
    if K == 1:
        return origin, np.ones(1)
    D = anchors[1:] - origin
    _, s, Vt = np.linalg.svd(D)
    if s[0] == 0.0 or s[-1] <= ANCHOR_RTOL * s[0]:
        raise DegenerateAnchorError(vertex)
    return origin, Vt[-1]


def _reflect_tail(x: np.ndarray, v: int, K: int) -> None:
    """In place: reflect rows ``v-1:`` across the hyperplane through rows ``v-1-K:v-1``."""
    if v <= K or v > x.shape[0]:
        raise ValueError(f"partial reflection needs K < v <= n, got v={v}, K={K}")
    origin, normal = _reflector(x[v - 1 - K : v - 1], v)
    tail = x[v - 1 :]
    tail -= 2.0 * np.outer((tail - origin) @ normal, normal)


def partial_reflection(x: np.ndarray, v: int, K: int | None = None, order=None) -> np.ndarray:
    """Reflect every point at position ``>= v`` across the hyperplane of its K predecessors.

    ``v`` is a 1-based position in ``order`` (identity when omitted).
    """
    x = np.array(x, dtype=float)
    if K is None:
        K = x.shape[1]
    if order is None:
        _reflect_tail(x, v, K)
        return x
    perm = np.asarray(order, dtype=np.intp) - 1
    xo = x[perm]
    _reflect_tail(xo, v, K)
    x[perm] = xo
    return x


@dataclass(frozen=True)
class GroupElement:
    """A composition of partial reflections, one per generator in ``subset``."""

    subset: tuple[int, ...] = ()

    def apply(self, x: np.ndarray, structure: DmdgpStructure) -> np.ndarray:
        return apply_group_element(x, self.subset, structure)


def apply_group_element(x: np.ndarray, subset, structure: DmdgpStructure) -> np.ndarray:
    perm = structure.permutation
    xo = np.array(x, dtype=float)[perm]
    for v in sorted(subset):
        _reflect_tail(xo, v, structure.K)
    out = np.empty_like(xo)
    out[perm] = xo
    return out


def enumerate_group(structure: DmdgpStructure, cap: int = GROUP_SIZE_CAP) -> Iterator[GroupElement]:
    """Yield all ``2^|Z|`` elements, identity first, ordered by bitmask over ``Z``."""
    Z = structure.Z
    if len(Z) > cap:
        raise GroupTooLargeError(f"pruning group has 2^{len(Z)} elements, cap is 2^{cap}")
    for mask in range(1 << len(Z)):
        yield GroupElement(tuple(v for i, v in enumerate(Z) if mask >> i & 1))


def _better(value, subset, best_value, best_subset) -> bool:
    return value < best_value or (value == best_value and subset < best_subset)


def demi_alg1(
    x: np.ndarray,
    y: np.ndarray,
    structure: DmdgpStructure,
    allow_reflection: bool = True,
    cap: int = GROUP_SIZE_CAP,
) -> AlignmentResult:
    """DEMI by anchoring on the first K points, then scanning the pruning group."""
    K = structure.K
    first = structure.permutation[:K]
    anchor = procrustes(x[first], y[first], allow_reflection)
    moved = anchor.apply(np.asarray(y, dtype=float))
    best = None
    for g in enumerate_group(structure, cap):
        candidate = apply_group_element(moved, g.subset, structure)
        value = realization_norm(x - candidate)
        if best is None or _better(value, g.subset, best[0], best[1]):
            best = (value, g.subset, candidate)
    value, subset, aligned = best
    return AlignmentResult(
        rotation=anchor.rotation,
        translation=anchor.translation,
        residual=value,
        reflection=anchor.reflection,
        group_element=subset,
        aligned=aligned,
    )


def demi_exhaustive(
    x: np.ndarray,
    y: np.ndarray,
    structure: DmdgpStructure,
    allow_reflection: bool = True,
    cap: int = GROUP_SIZE_CAP,
) -> AlignmentResult:
    """DEMI with a full alignment for every group element.

    Partial reflections commute with congruences (they are defined by the
    points themselves), so ``g(rho(y)) = rho(g(y))`` and each element can be
    applied to ``y`` before aligning. For each element both the least-squares
    congruence and the first-K anchored congruence are scored, which makes the
    result never worse than :func:`demi_alg1`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    K = structure.K
    first = structure.permutation[:K]
    anchor = procrustes(x[first], y[first], allow_reflection)
    best = None
    for g in enumerate_group(structure, cap):
        gy = apply_group_element(y, g.subset, structure)
        full = procrustes(x, gy, allow_reflection)
        anchored_aligned = anchor.apply(gy)
        anchored_value = realization_norm(x - anchored_aligned)
        if anchored_value < full.residual:
            full = AlignmentResult(
                anchor.rotation, anchor.translation, anchored_value, anchor.reflection, aligned=anchored_aligned
            )
        if best is None or _better(full.residual, g.subset, best.residual, best.group_element):
            full.group_element = g.subset
            best = full
    return best
