"""Instances, realizations, vertex orders and the pruning-group structure.

Vertices are 1-based at every public boundary (constructors, file formats,
orders, the generator set ``Z``, error messages). Internally edge endpoints
are stored as 0-based index arrays so they can be used directly for numpy
fancy indexing.

A *realization* is a plain ``float`` array of shape ``(n, K)``; row ``i``
holds the coordinates of vertex ``i + 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CapabilityError,
    InstanceError,
    InstanceParseError,
    InvalidOrderError,
    MalformedOrderError,
)


def as_realization(points, n: int | None = None, K: int | None = None) -> np.ndarray:
    """Validate and copy ``points`` into a C-contiguous ``(n, K)`` float array."""
    x = np.array(points, dtype=float)
    if x.ndim != 2:
        raise InstanceError(f"realization must be a 2-d array, got shape {x.shape}")
    if n is not None and x.shape[0] != n:
        raise InstanceError(f"realization has {x.shape[0]} points, instance has {n} vertices")
    if K is not None and x.shape[1] != K:
        raise InstanceError(f"realization points have dimension {x.shape[1]}, expected K={K}")
    if not np.all(np.isfinite(x)):
        raise InstanceError("realization contains non-finite coordinates")
    return x


class IdgpInstance:
    """A graph with interval edge weights ``[L, U]`` to be realized in ``R^K``.

    Parameters
    ----------
    n, K:
        Vertex count and embedding dimension.
    edges:
        Iterable of ``(u, v, L, U)`` with 1-based vertex labels. Each edge is
        canonicalized to ``u < v``; duplicates and self-loops are rejected.
    order:
        Optional 1-based vertex order, claimed to be a contiguous
        trilateration order. Only validated when used.
    reference:
        Optional trusted realization, shape ``(n, K)``.

    Instances are immutable; the numpy arrays they expose are read-only.
    """

    __slots__ = ("_n", "_K", "_u", "_v", "_lower", "_upper", "_order", "_reference")

    def __init__(self, n: int, K: int, edges: Iterable[Sequence], order=None, reference=None):
        n = int(n)
        K = int(K)
        if K < 1:
            raise InstanceError(f"embedding dimension K must be >= 1, got {K}")
        if n < 1:
            raise InstanceError(f"vertex count n must be >= 1, got {n}")
        us, vs, lo, hi = [], [], [], []
        seen = set()
        for idx, edge in enumerate(edges):
            if len(edge) != 4:
                raise InstanceError(f"edge {idx}: expected (u, v, L, U), got {edge!r}")
            a, b, L, U = edge
            if int(a) != a or int(b) != b:
                raise InstanceError(f"edge {idx}: vertex labels must be integers, got {a!r}, {b!r}")
            a, b, L, U = int(a), int(b), float(L), float(U)
            if not (1 <= a <= n and 1 <= b <= n):
                raise InstanceError(f"edge {idx}: vertex out of range 1..{n}: ({a}, {b})")
            if a == b:
                raise InstanceError(f"edge {idx}: self-loop on vertex {a}")
            if not (np.isfinite(L) and np.isfinite(U)):
                raise InstanceError(f"edge {idx}: non-finite bounds")
            if L < 0:
                raise InstanceError(f"edge {idx}: negative lower bound L={L}")
            if L > U:
                raise InstanceError(f"edge {idx}: lower bound exceeds upper bound (L={L} > U={U})")
            a, b = min(a, b), max(a, b)
            if (a, b) in seen:
                raise InstanceError(f"edge {idx}: duplicate edge {{{a}, {b}}}")
            seen.add((a, b))
            us.append(a - 1)
            vs.append(b - 1)
            lo.append(L)
            hi.append(U)
        self._n = n
        self._K = K
        self._u = _frozen(np.array(us, dtype=np.intp))
        self._v = _frozen(np.array(vs, dtype=np.intp))
        self._lower = _frozen(np.array(lo, dtype=float))
        self._upper = _frozen(np.array(hi, dtype=float))
        if order is not None:
            order = tuple(int(o) for o in order)
            if len(order) != n or sorted(order) != list(range(1, n + 1)):
                raise MalformedOrderError(f"order must be a permutation of 1..{n}")
        self._order = order
        self._reference = None if reference is None else _frozen(as_realization(reference, n, K))

    n = property(lambda self: self._n)
    K = property(lambda self: self._K)
    u = property(lambda self: self._u, doc="0-based first endpoints, shape (m,)")
    v = property(lambda self: self._v, doc="0-based second endpoints, shape (m,)")
    lower = property(lambda self: self._lower)
    upper = property(lambda self: self._upper)
    order = property(lambda self: self._order)
    reference = property(lambda self: self._reference)

    @property
    def m(self) -> int:
        return len(self._u)

    @property
    def is_exact(self) -> bool:
        """True when every interval is degenerate (a plain DGP instance)."""
        return bool(np.all(self._lower == self._upper))

    @property
    def edges(self) -> list[tuple[int, int, float, float]]:
        return [
            (int(a) + 1, int(b) + 1, float(L), float(U))
            for a, b, L, U in zip(self._u, self._v, self._lower, self._upper)
        ]

    def with_order(self, order) -> "IdgpInstance":
        return IdgpInstance(self._n, self._K, self.edges, order=order, reference=self._reference)

    def with_reference(self, reference) -> "IdgpInstance":
        return IdgpInstance(self._n, self._K, self.edges, order=self._order, reference=reference)

    def to_dict(self) -> dict:
        return {
            "K": self._K,
            "n": self._n,
            "edges": [list(e) for e in self.edges],
            "order": None if self._order is None else list(self._order),
            "reference": None if self._reference is None else self._reference.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, IdgpInstance):
            return NotImplemented
        same_ref = (self._reference is None and other._reference is None) or (
            self._reference is not None
            and other._reference is not None
            and np.array_equal(self._reference, other._reference)
        )
        return (
            self._n == other._n
            and self._K == other._K
            and np.array_equal(self._u, other._u)
            and np.array_equal(self._v, other._v)
            and np.array_equal(self._lower, other._lower)
            and np.array_equal(self._upper, other._upper)
            and self._order == other._order
            and same_ref
        )

    __hash__ = None

    def __repr__(self):
        kind = "DGP" if self.is_exact else "iDGP"
        return f"IdgpInstance({kind}, n={self._n}, m={self.m}, K={self._K})"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BoxBounds:
    lo: float
    hi: float


def default_box(instance: IdgpInstance) -> BoxBounds:
    """Box ``[-M, M]`` with ``M`` half the sum of all upper bounds."""
    hi = 0.5 * float(np.sum(instance.upper))
    return BoxBounds(-hi, hi)


def discretization_edge_count(n: int, K: int) -> int:
    if K < 1 or n < K:
        raise ValueError(f"need n >= K >= 1, got n={n}, K={K}")
    return K * (K - 1) // 2 + (n - K) * K


# ---------------------------------------------------------------------------
# vertex orders and the pruning group structure


def _check_order(instance: IdgpInstance, order) -> tuple[int, ...]:
    order = tuple(int(o) for o in order)
    if len(order) != instance.n:
        raise MalformedOrderError(f"order has length {len(order)}, instance has n={instance.n}")
    if sorted(order) != list(range(1, instance.n + 1)):
        raise MalformedOrderError(f"order is not a permutation of 1..{instance.n}")
    return order


def _edge_positions(instance: IdgpInstance, order: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """1-based positions (a < b) of every edge's endpoints under ``order``."""
    pos = np.empty(instance.n + 1, dtype=np.intp)
    pos[list(order)] = np.arange(1, instance.n + 1)
    pu = pos[instance.u + 1]
    pv = pos[instance.v + 1]
    return np.minimum(pu, pv), np.maximum(pu, pv)


def validate_ctop_order(instance: IdgpInstance, order) -> bool:
    """Check the clique and contiguous trilateration properties of ``order``."""
    order = _check_order(instance, order)
    a, b = _edge_positions(instance, order)
    present = set(zip(a.tolist(), b.tolist()))
    K, n = instance.K, instance.n
    for w in range(2, n + 1):
        for u in range(max(1, w - K), w):
            if (u, w) not in present:
                return False
    return True


@dataclass(frozen=True)
class DmdgpStructure:
    """Discretization/pruning edge partition and generator set of the pruning group.

    ``order`` lists vertex labels by position; ``Z`` holds 1-based *positions*
    in that order (equal to vertex labels under the identity order).
    Edge subsets are tuples of 0-based edge indices into the instance.
    """

    instance: IdgpInstance
    order: tuple[int, ...]
    discretization_edges: tuple[int, ...]
    pruning_edges: tuple[int, ...]
    Z: tuple[int, ...]

    @property
    def K(self) -> int:
        return self.instance.K

    @property
    def permutation(self) -> np.ndarray:
        """0-based vertex index at each position; ``x[perm]`` lists points in order."""
        return np.asarray(self.order, dtype=np.intp) - 1


def compute_Z(instance: IdgpInstance, order=None) -> DmdgpStructure:
    if order is None:
        order = instance.order
    if order is None:
        raise CapabilityError("the pruning group needs a vertex order and the instance has none")
    order = _check_order(instance, order)
    if not validate_ctop_order(instance, order):
        raise InvalidOrderError("order is not a contiguous trilateration order for this instance")
    K, n = instance.K, instance.n
    a, b = _edge_positions(instance, order)
    is_pruning = (b - a) > K
    # difference array: a pruning edge at positions (a, b) covers a+K+1..b
    cover = np.zeros(n + 2, dtype=np.intp)
    np.add.at(cover, a[is_pruning] + K + 1, 1)
    np.add.at(cover, b[is_pruning] + 1, -1)
    covered = np.cumsum(cover)
    Z = tuple(v for v in range(K + 1, n + 1) if covered[v] == 0)
    idx = np.arange(instance.m)
    return DmdgpStructure(
        instance=instance,
        order=order,
        discretization_edges=tuple(idx[~is_pruning].tolist()),
        pruning_edges=tuple(idx[is_pruning].tolist()),
        Z=Z,
    )


# ---------------------------------------------------------------------------
# file formats


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("json", "txt"):
            raise ValueError(f"unknown instance format {fmt!r}")
        return fmt
    return "json" if path.suffix.lower() == ".json" else "txt"


def instance_from_dict(data: dict) -> IdgpInstance:
    for key in ("n", "K", "edges"):
        if key not in data:
            raise InstanceParseError(f"missing field {key!r}")
    edges = data["edges"]
    if not isinstance(edges, list):
        raise InstanceParseError("field 'edges' must be a list")
    for i, e in enumerate(edges):
        if not isinstance(e, list) or len(e) != 4:
            raise InstanceParseError(f"edges[{i}]: expected [u, v, L, U], got {e!r}")
    try:
        return IdgpInstance(
            data["n"], data["K"], edges, order=data.get("order"), reference=data.get("reference")
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InstanceError):
            raise
        raise InstanceParseError(str(exc)) from exc


def load_instance(path, format: str | None = None) -> IdgpInstance:
    path = Path(path)
    fmt = _infer_format(path, format)
    text = path.read_text()
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InstanceParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return instance_from_dict(data)
    return _parse_text(text, path)


def _parse_text(text: str, path: Path) -> IdgpInstance:
    rows = [
        (lineno, line.split())
        for lineno, line in enumerate(text.splitlines(), start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not rows:
        raise InstanceParseError(f"{path}: empty instance file")
    lineno, header = rows[0]
    try:
        n, m, K = (int(t) for t in header)
    except ValueError as exc:
        raise InstanceParseError(f"{path}: line {lineno}: header must be 'n m K'") from exc
    if len(rows) - 1 != m:
        raise InstanceParseError(f"{path}: header announces {m} edges, file has {len(rows) - 1}")
    edges = []
    for lineno, tokens in rows[1:]:
        if len(tokens) != 4:
            raise InstanceParseError(f"{path}: line {lineno}: expected 'u v L U'")
        try:
            edges.append((int(tokens[0]), int(tokens[1]), float(tokens[2]), float(tokens[3])))
        except ValueError as exc:
            raise InstanceParseError(f"{path}: line {lineno}: {exc}") from exc
    return IdgpInstance(n, K, edges)


def save_instance(instance: IdgpInstance, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "json":
        path.write_text(json.dumps(instance.to_dict()) + "\n")
        return
    lines = [f"{instance.n} {instance.m} {instance.K}"]
    lines += [f"{u} {v} {L!r} {U!r}" for u, v, L, U in instance.edges]
    path.write_text("\n".join(lines) + "\n")
