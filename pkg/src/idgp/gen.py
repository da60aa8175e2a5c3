"""Instance generators and statistics of the pruning-group generator set Z."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import IdgpInstance, discretization_edge_count, validate_ctop_order
from .errors import IdgpError, InstanceParseError

BACKBONE_ATOMS = ("N", "CA", "C")


@dataclass(frozen=True)
class RandomDmdgpConfig:
    n: int
    K: int
    s: float
    seed: int = 0
    samples: int = 500

    def __post_init__(self):
        if not (self.n >= self.K >= 1):
            raise IdgpError(f"need n >= K >= 1, got n={self.n}, K={self.K}")
        if not 0.0 <= self.s <= 1.0:
            raise IdgpError(f"edge probability s must lie in [0, 1], got {self.s}")
        if self.samples < 1:
            raise IdgpError("samples must be >= 1")


def backbone_pairs(n: int, K: int) -> list[tuple[int, int]]:
    """1-based discretization pairs ``(u, w)`` with ``0 < w - u <= K``."""
    return [(u, w) for w in range(2, n + 1) for u in range(max(1, w - K), w)]


def pruning_pairs(n: int, K: int) -> np.ndarray:
    """1-based candidate pruning pairs ``(u, w)`` with ``w - u > K``, shape (P, 2)."""
    pairs = [(u, w) for u in range(1, n + 1) for w in range(u + K + 1, n + 1)]
    return np.array(pairs, dtype=np.intp).reshape(-1, 2)


def sample_pruning_masks(n: int, K: int, s: float, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``(samples, P)`` matrix: which candidate pruning pairs are present."""
    P = len(pruning_pairs(n, K))
    return rng.random((samples, P)) < s


def random_kdmdgp(config: RandomDmdgpConfig, rng: np.random.Generator | None = None) -> IdgpInstance:
    """Backbone graph plus each other pair independently with probability ``s``.

    Unit weights, identity order.
    """
    rng = rng or np.random.default_rng(config.seed)
    mask = sample_pruning_masks(config.n, config.K, config.s, 1, rng)[0]
    return _graph_from_mask(config.n, config.K, mask)


def _graph_from_mask(n: int, K: int, mask: np.ndarray) -> IdgpInstance:
    pairs = backbone_pairs(n, K) + [tuple(p) for p in pruning_pairs(n, K)[mask].tolist()]
    return IdgpInstance(n, K, [(u, w, 1.0, 1.0) for u, w in pairs], order=range(1, n + 1))


def z_sizes_from_masks(n: int, K: int, masks: np.ndarray) -> np.ndarray:
    """|Z| for each sampled graph, computed from coverage of positions K+1..n."""
    pairs = pruning_pairs(n, K)
    positions = np.arange(K + 1, n + 1)
    # cover[p, j]: pair p covers position K+1+j  (u + K < v <= w)
    cover = (pairs[:, 0:1] + K < positions[None, :]) & (positions[None, :] <= pairs[:, 1:2])
    hits = masks.astype(np.int32) @ cover.astype(np.int32)
    return (hits == 0).sum(axis=1)


def z_membership_from_masks(n: int, K: int, masks: np.ndarray) -> np.ndarray:
    """Boolean ``(samples, n-K)`` matrix: position ``K+1+j`` is in Z."""
    pairs = pruning_pairs(n, K)
    positions = np.arange(K + 1, n + 1)
    cover = (pairs[:, 0:1] + K < positions[None, :]) & (positions[None, :] <= pairs[:, 1:2])
    return (masks.astype(np.int32) @ cover.astype(np.int32)) == 0


# ---------------------------------------------------------------------------
# expectation and variance of |Z|


def expected_Z_exact(n: int, K: int, s: float) -> float:
    """Exact ``E|Z| = sum_{v=K+1}^{n} (1-s)^{(v-K-1)(n-v+1)}``."""
    return float(sum((1.0 - s) ** ((v - K - 1) * (n - v + 1)) for v in range(K + 1, n + 1)))


def expected_Z_bound(n: int, K: int, s: float) -> float:
    """Upper bound ``1 + (n-K-1)(1-s)^{n-K-1}`` on ``E|Z|``."""
    return 1.0 + (n - K - 1) * (1.0 - s) ** (n - K - 1)


def variance_Z_exact(n: int, K: int, s: float) -> float:
    """Exact variance of |Z| from the pairwise inclusion probabilities."""
    t = 1.0 - s
    vs = range(K + 2, n + 1)
    a = {v: (v - K - 1) * (n - v + 1) for v in vs}
    var = sum(t ** a[v] - t ** (2 * a[v]) for v in vs)
    for v1 in vs:
        for v2 in range(v1 + 1, n + 1):
            joint = t ** (a[v1] + (v2 - v1) * (n - v2 + 1))
            var += 2.0 * (joint - t ** (a[v1] + a[v2]))
    return float(var)


def variance_Z_bound(n: int, K: int, s: float) -> float:
    """Upper bound ``(8/s^2 - 2/s)(1-s)^{n-K-1}`` on ``Var|Z|``; needs ``s > 0``."""
    if not 0.0 < s <= 1.0:
        raise IdgpError(f"variance bound needs s in (0, 1], got {s}")
    return (8.0 / s**2 - 2.0 / s) * (1.0 - s) ** (n - K - 1)


@dataclass(frozen=True)
class ZStats:
    n: int
    K: int
    s: float
    samples: int
    mean: float
    std: float
    min: int
    max: int
    always_contains_first: bool
    expected_exact: float
    expected_bound: float
    variance_exact: float
    variance_bound: float | None

    @property
    def standard_error(self) -> float:
        return self.std / math.sqrt(self.samples)

    def as_row(self) -> dict:
        return {
            "n": self.n,
            "K": self.K,
            "s": self.s,
            "samples": self.samples,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "expected_exact": self.expected_exact,
            "expected_bound": self.expected_bound,
            "variance_exact": self.variance_exact,
            "variance_bound": "" if self.variance_bound is None else self.variance_bound,
        }


def z_statistics(config: RandomDmdgpConfig) -> ZStats:
    """Sample ``config.samples`` random graphs and summarize |Z| against the theory."""
    rng = np.random.default_rng(config.seed)
    n, K = config.n, config.K
    masks = sample_pruning_masks(n, K, config.s, config.samples, rng)
    member = z_membership_from_masks(n, K, masks)
    sizes = member.sum(axis=1)
    return ZStats(
        n=n,
        K=K,
        s=config.s,
        samples=config.samples,
        mean=float(sizes.mean()),
        std=float(sizes.std()),
        min=int(sizes.min()),
        max=int(sizes.max()),
        always_contains_first=bool(member[:, 0].all()) if n > K else False,
        expected_exact=expected_Z_exact(n, K, config.s),
        expected_bound=expected_Z_bound(n, K, config.s),
        variance_exact=variance_Z_exact(n, K, config.s),
        variance_bound=variance_Z_bound(n, K, config.s) if config.s > 0 else None,
    )


# ---------------------------------------------------------------------------
# realization-backed instances


def random_walk(n: int, K: int, rng: np.random.Generator, jitter: float = 0.1) -> np.ndarray:
    """Unit steps in uniformly random directions, plus uniform jitter per point."""
    steps = rng.normal(size=(n, K))
    steps /= np.linalg.norm(steps, axis=1, keepdims=True)
    steps[0] = 0.0
    x = np.cumsum(steps, axis=0)
    x += rng.uniform(-jitter, jitter, size=x.shape)
    return x - x.mean(axis=0)


def _anchors_ok(x: np.ndarray, K: int, rtol: float = 1e-3) -> bool:
    if K == 1:
        return bool(np.all(np.abs(np.diff(x[:, 0])) > rtol))
    for v in range(K, x.shape[0]):
        D = x[v - K + 1 : v] - x[v - K]
        sv = np.linalg.svd(D, compute_uv=False)
        if sv[-1] <= rtol * max(sv[0], 1e-300):
            return False
    return True


def random_feasible_instance(
    n: int,
    K: int,
    width: float = 0.1,
    seed: int = 0,
    cutoff: float = 2.5,
    jitter: float = 0.1,
    max_tries: int = 100,
) -> IdgpInstance:
    """A feasible iDGP instance built on a sampled random-walk realization.

    Discretization pairs ``|i - j| <= K`` get exact distances; every other pair
    closer than ``cutoff`` becomes a pruning edge with interval
    ``[d(1-width), d(1+width)]``. The walk is stored as the reference
    realization and the identity order is attached.
    """
    if not (n > K >= 1):
        raise IdgpError(f"need n > K >= 1, got n={n}, K={K}")
    if not 0.0 <= width < 1.0:
        raise IdgpError(f"relative width must lie in [0, 1), got {width}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        x = random_walk(n, K, rng, jitter)
        if _anchors_ok(x, K):
            break
    else:
        raise IdgpError(f"could not sample non-degenerate anchors in {max_tries} tries")
    edges = []
    for i in range(n):
        # same expression as the error measures, so exact edges evaluate to 0
        dist = np.linalg.norm(x[i + 1 :] - x[i], axis=1)
        for j in range(i + 1, n):
            d = float(dist[j - i - 1])
            if j - i <= K:
                edges.append((i + 1, j + 1, d, d))
            elif d <= cutoff:
                edges.append((i + 1, j + 1, d * (1.0 - width), d * (1.0 + width)))
    return IdgpInstance(n, K, edges, order=range(1, n + 1), reference=x)


# ---------------------------------------------------------------------------
# PDB ingestion


@dataclass(frozen=True)
class PdbAtom:
    serial: int
    name: str
    residue: str
    chain: str
    res_seq: str
    xyz: tuple[float, float, float]


def read_pdb_atoms(path) -> list[PdbAtom]:
    """ATOM records of the first model, first alternate location only."""
    atoms = []
    seen = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        record = line[:6]
        if record.startswith("ENDMDL"):
            break
        if not record.startswith("ATOM"):
            continue
        try:
            serial = int(line[6:11])
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError as exc:
            raise InstanceParseError(f"{path}: line {lineno}: malformed ATOM record ({exc})") from exc
        name = line[12:16].strip()
        alt = line[16:17]
        key = (line[21:22], line[22:27], name)
        if alt not in (" ", "", "A", "1") or key in seen:
            continue
        seen.add(key)
        atoms.append(PdbAtom(serial, name, line[17:20].strip(), line[21:22].strip(), line[22:27].strip(), xyz))
    if not atoms:
        raise InstanceParseError(f"{path}: no ATOM records")
    return atoms


def ingest_pdb(
    path,
    backbone: bool = True,
    cutoff: float = 5.0,
    width: float = 0.1,
) -> IdgpInstance:
    """Instance from atomic coordinates: all pairs within ``cutoff`` Angstrom.

    Pairs ``(i, i+1)`` and ``(i, i+2)`` in atom order keep their exact
    distance (bond lengths and the third side of bond angles); all other
    pairs get ``[d(1-width), d(1+width)]``. Coordinates become the reference
    realization; the identity order is attached when it is a valid
    contiguous trilateration order.
    """
    atoms = read_pdb_atoms(path)
    if backbone:
        atoms = [a for a in atoms if a.name in BACKBONE_ATOMS]
        if not atoms:
            raise InstanceParseError(f"{path}: no backbone atoms (N, CA, C)")
    x = np.array([a.xyz for a in atoms], dtype=float)
    n = len(atoms)
    edges = []
    for i in range(n):
        d = np.linalg.norm(x[i + 1 :] - x[i], axis=1)
        for off in np.nonzero(d <= cutoff)[0]:
            j = i + 1 + int(off)
            dij = float(d[off])
            if j - i <= 2:
                edges.append((i + 1, j + 1, dij, dij))
            else:
                edges.append((i + 1, j + 1, dij * (1.0 - width), dij * (1.0 + width)))
    inst = IdgpInstance(n, 3, edges, reference=x)
    identity = list(range(1, n + 1))
    if n > 3 and validate_ctop_order(inst, identity):
        inst = inst.with_order(identity)
    return inst


__all__ = [
    "RandomDmdgpConfig",
    "ZStats",
    "backbone_pairs",
    "discretization_edge_count",
    "expected_Z_bound",
    "expected_Z_exact",
    "ingest_pdb",
    "random_feasible_instance",
    "random_kdmdgp",
    "read_pdb_atoms",
    "sample_pruning_masks",
    "variance_Z_bound",
    "variance_Z_exact",
    "z_sizes_from_masks",
    "z_statistics",
]
