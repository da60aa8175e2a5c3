"""Export of the Gram-matrix SDP relaxations in SDPA sparse format.

Problems are written in the SDPA *dual* form

    max  F0 . Y   s.t.  Fi . Y = c_i  (i = 1..m),  Y psd,

with ``Y = diag(X, slacks)``: the ``n x n`` Gram block ``X`` and a diagonal
(LP) block holding the nonnegative slacks that turn inequalities into
equalities. An SDPA solver's ``yMat``/dual matrix for block 1 is the Gram
matrix; :func:`read_gram_matrix` and :func:`gram_to_realization` turn such
output back into coordinates.

Variants:

``sdprel``
    maximize the linearized sum of squared edge lengths subject to
    ``L^2 <= X_uu + X_vv - 2 X_uv <= U^2``.
``sdprel-trace``
    same constraints, minimize ``Tr(X)``.
``yajima``
    minimize ``sum_e (s_e - A_e.X + L_e^2) + 2 sum_e X_uv`` subject to
    ``A_e.X - L_e^2 <= s_e``, ``2 A_e.X - L_e^2 - U_e^2 <= s_e``, ``s >= 0``.
    The constant ``sum_e L_e^2`` is dropped from the exported objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import IdgpInstance
from .errors import IdgpError, InstanceParseError

SDP_VARIANTS = ("sdprel", "sdprel-trace", "yajima")

Entry = tuple[int, int, int, int, float]  # (matno, block, i, j, value), 1-based, i <= j


@dataclass
class SdpaProblem:
    c: list[float]
    block_struct: list[int]
    entries: list[Entry] = field(default_factory=list)
    comment: str = ""

    @property
    def n_constraints(self) -> int:
        return len(self.c)

    @property
    def psd_blocks(self) -> list[int]:
        return [b for b in self.block_struct if b > 0]

    def add(self, matno: int, block: int, i: int, j: int, value: float) -> None:
        if value == 0.0:
            return
        if i > j:
            i, j = j, i
        self.entries.append((matno, block, i, j, float(value)))

    def normalized(self) -> "SdpaProblem":
        """Merge duplicate coordinates and sort entries."""
        acc: dict[tuple[int, int, int, int], float] = {}
        for matno, blk, i, j, val in self.entries:
            key = (matno, blk, i, j)
            acc[key] = acc.get(key, 0.0) + val
        entries = [(*k, v) for k, v in sorted(acc.items()) if v != 0.0]
        return SdpaProblem(list(self.c), list(self.block_struct), entries, self.comment)

    def to_text(self) -> str:
        prob = self.normalized()
        lines = []
        if prob.comment:
            lines += ['"' + line for line in prob.comment.splitlines()]
        lines.append(str(prob.n_constraints))
        lines.append(str(len(prob.block_struct)))
        lines.append(" ".join(str(b) for b in prob.block_struct))
        lines.append(" ".join(repr(float(v)) for v in prob.c))
        lines += [f"{m} {b} {i} {j} {v!r}" for m, b, i, j, v in prob.entries]
        return "\n".join(lines) + "\n"


def _edge_matrix(prob: SdpaProblem, matno: int, u: int, v: int, scale: float = 1.0) -> None:
    """Add ``scale * A_e`` with ``A_e . X = X_uu + X_vv - 2 X_uv`` (1-based u, v)."""
    prob.add(matno, 1, u, u, scale)
    prob.add(matno, 1, v, v, scale)
    prob.add(matno, 1, u, v, -scale)  # symmetric storage: one off-diagonal entry counts twice


def export_sdp(instance: IdgpInstance, which: str = "sdprel") -> SdpaProblem:
    if which not in SDP_VARIANTS:
        raise IdgpError(f"unknown SDP variant {which!r}; choose from {', '.join(SDP_VARIANTS)}")
    n, m = instance.n, instance.m
    us = (instance.u + 1).tolist()
    vs = (instance.v + 1).tolist()
    L2 = (instance.lower**2).tolist()
    U2 = (instance.upper**2).tolist()

    if which in ("sdprel", "sdprel-trace"):
        # constraints 1..m: A.X - t = L^2 ; m+1..2m: A.X + t' = U^2
        prob = SdpaProblem(c=L2 + U2, block_struct=[n, -2 * m], comment=f"idgp {which} n={n} m={m}")
        for e in range(m):
            _edge_matrix(prob, e + 1, us[e], vs[e])
            prob.add(e + 1, 2, e + 1, e + 1, -1.0)
            _edge_matrix(prob, m + e + 1, us[e], vs[e])
            prob.add(m + e + 1, 2, m + e + 1, m + e + 1, 1.0)
        if which == "sdprel":
            for e in range(m):
                _edge_matrix(prob, 0, us[e], vs[e])
        else:
            for i in range(1, n + 1):
                prob.add(0, 1, i, i, -1.0)
        return prob.normalized()

    # yajima: LP block = [s (m) | t1 (m) | t2 (m)]
    prob = SdpaProblem(
        c=L2 + [a + b for a, b in zip(L2, U2)],
        block_struct=[n, -3 * m],
        comment=f"idgp yajima n={n} m={m} (objective constant sum L^2 dropped)",
    )
    for e in range(m):
        # A.X - s + t1 = L^2
        _edge_matrix(prob, e + 1, us[e], vs[e])
        prob.add(e + 1, 2, e + 1, e + 1, -1.0)
        prob.add(e + 1, 2, m + e + 1, m + e + 1, 1.0)
        # 2 A.X - s + t2 = L^2 + U^2
        _edge_matrix(prob, m + e + 1, us[e], vs[e], 2.0)
        prob.add(m + e + 1, 2, e + 1, e + 1, -1.0)
        prob.add(m + e + 1, 2, 2 * m + e + 1, 2 * m + e + 1, 1.0)
        # maximize -(sum s - sum A.X + 2 sum X_uv)
        _edge_matrix(prob, 0, us[e], vs[e])
        prob.add(0, 1, us[e], vs[e], -1.0)
        prob.add(0, 2, e + 1, e + 1, -1.0)
    return prob.normalized()


def write_sdpa(problem: SdpaProblem, path) -> None:
    Path(path).write_text(problem.to_text())


def read_sdpa(path) -> SdpaProblem:
    """Parse a sparse SDPA file (``.dat-s``)."""
    lines = Path(path).read_text().splitlines()
    comment = []
    body = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped[0] in '"*' and not body:
            comment.append(stripped[1:])
            continue
        body.append((lineno, stripped.replace(",", " ").replace("{", " ").replace("}", " ")))
    if len(body) < 4:
        raise InstanceParseError(f"{path}: truncated SDPA file")
    try:
        m = int(body[0][1].split()[0])
        nblocks = int(body[1][1].split()[0])
        block_struct = [int(t) for t in body[2][1].split()[:nblocks]]
        c = [float(t) for t in body[3][1].split()[:m]]
    except (ValueError, IndexError) as exc:
        raise InstanceParseError(f"{path}: malformed SDPA header: {exc}") from exc
    prob = SdpaProblem(c=c, block_struct=block_struct, comment="\n".join(comment))
    for lineno, text in body[4:]:
        tokens = text.split()
        try:
            prob.entries.append(
                (int(tokens[0]), int(tokens[1]), int(tokens[2]), int(tokens[3]), float(tokens[4]))
            )
        except (ValueError, IndexError) as exc:
            raise InstanceParseError(f"{path}: line {lineno}: malformed entry") from exc
    return prob.normalized()


def read_gram_matrix(path, n: int | None = None) -> np.ndarray:
    """Read a symmetric matrix from ``row col value`` triples (1-based)."""
    triples = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line[0] in "#\"*":
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise InstanceParseError(f"{path}: line {lineno}: expected 'row col value'")
        try:
            triples.append((int(tokens[0]), int(tokens[1]), float(tokens[2])))
        except ValueError as exc:
            raise InstanceParseError(f"{path}: line {lineno}: {exc}") from exc
    size = n if n is not None else max(max(i, j) for i, j, _ in triples)
    X = np.zeros((size, size))
    for i, j, val in triples:
        X[i - 1, j - 1] = val
        X[j - 1, i - 1] = val
    return X


def write_gram_matrix(X: np.ndarray, path) -> None:
    n = X.shape[0]
    lines = [f"{i + 1} {j + 1} {float(X[i, j])!r}" for i in range(n) for j in range(i, n) if X[i, j] != 0.0]
    Path(path).write_text("\n".join(lines) + "\n")


def gram_to_realization(X: np.ndarray, K: int) -> np.ndarray:
    """Rank-K realization from the top-K eigenpairs of a Gram matrix."""
    X = 0.5 * (np.asarray(X, dtype=float) + np.asarray(X, dtype=float).T)
    w, V = np.linalg.eigh(X)
    top = np.argsort(w)[::-1][:K]
    lam = np.clip(w[top], 0.0, None)
    return V[:, top] * np.sqrt(lam)
