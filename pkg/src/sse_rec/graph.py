"""Knowledge graphs over embedding indices and SSE transition models.

A :class:`TransitionModel` describes, for one embedding table, the
distribution ``p(j, .)`` used to replace index ``j`` during a training step:

* ``identity`` - never replace;
* ``uniform``  - keep ``j`` with probability ``1 - p0``, otherwise pick any
  other index uniformly (SSE-SE);
* ``graph``    - keep ``j`` with probability ``1 - p0``; a graph neighbour is
  ``rho`` times as likely as a non-neighbour (SSE-Graph).

For the graph kind with degree ``d_j`` the row is::

    Z_j      = rho * d_j + (N - 1 - d_j)
    p(j, j)  = 1 - p0
    p(j, k)  = p0 * rho / Z_j    k a neighbour of j
    p(j, l)  = p0 / Z_j          l != j, not a neighbour

Sampling never materialises the N x N table.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

if TYPE_CHECKING:
    from sse_rec.dataset import IdMap

IDENTITY = "identity"
UNIFORM = "uniform"
GRAPH = "graph"

# below this acceptance rate, non-neighbour draws switch from rejection to
# rank mapping over the complement
_REJECTION_MIN_ACCEPT = 0.5


class KnowledgeGraph:
    """Undirected, self-loop-free graph stored in CSR form.

    Neighbour lists are sorted and duplicate edges are collapsed.
    """

    def __init__(self, num_nodes: int, indptr: np.ndarray, indices: np.ndarray):
        if num_nodes < 1:
            raise ValueError("graph needs at least one node")
        self.num_nodes = int(num_nodes)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        if self.indptr.shape != (self.num_nodes + 1,):
            raise ValueError("indptr must have num_nodes + 1 entries")
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def from_edges(cls, num_nodes: int, edges) -> "KnowledgeGraph":
        """Build from an iterable of ``(j, k)`` pairs; both directions are added.

        Self-loops are dropped; duplicates collapse.
        """
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        arr = arr.reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
            raise ValueError(f"edge endpoint outside [0, {num_nodes})")
        arr = arr[arr[:, 0] != arr[:, 1]]
        both = np.concatenate([arr, arr[:, ::-1]])
        keys = np.unique(both[:, 0] * num_nodes + both[:, 1])
        rows, cols = np.divmod(keys, num_nodes)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(num_nodes, np.cumsum(indptr), cols)

    @classmethod
    def empty(cls, num_nodes: int) -> "KnowledgeGraph":
        return cls(num_nodes, np.zeros(num_nodes + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def neighbors(self, j: int) -> np.ndarray:
        return self.indices[self.indptr[j]:self.indptr[j + 1]]

    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(j).tolist() for j in range(self.num_nodes)]

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @cached_property
    def _edge_keys(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees)
        return rows * self.num_nodes + self.indices

    def has_edge(self, j, k):
        """Vectorised membership test; accepts scalars or equal-length arrays."""
        q = np.asarray(j, dtype=np.int64) * self.num_nodes + np.asarray(k, dtype=np.int64)
        keys = self._edge_keys
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, max(len(keys) - 1, 0))
        hit = keys[pos] == q if len(keys) else np.zeros(np.shape(q), dtype=bool)
        return bool(hit) if np.ndim(hit) == 0 else hit

    def edge_array(self) -> np.ndarray:
        """Undirected edges as an ``(E, 2)`` array with ``j < k``."""
        rows, cols = np.divmod(self._edge_keys, self.num_nodes)
        keep = rows < cols
        return np.stack([rows[keep], cols[keep]], axis=1)

    def to_scipy(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.num_nodes, self.num_nodes))

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __repr__(self):
        return f"KnowledgeGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def build_item_graph(entity_map: Mapping[int, Iterable], num_items: int | None = None) -> KnowledgeGraph:
    """Connect two items whenever their entity tag sets intersect.

    ``entity_map`` maps item index to its tags (e.g. cast members). Items
    missing from the map are isolated.
    """
    if num_items is None:
        num_items = max(entity_map, default=-1) + 1
    by_tag: dict = {}
    for item, tags in entity_map.items():
        for tag in set(tags):
            by_tag.setdefault(tag, []).append(item)
    edges = []
    for members in by_tag.values():
        m = np.asarray(sorted(members), dtype=np.int64)
        if len(m) < 2:
            continue
        a, b = np.triu_indices(len(m), k=1)
        edges.append(np.stack([m[a], m[b]], axis=1))
    allpairs = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    return KnowledgeGraph.from_edges(num_items, allpairs)


def load_edgelist(path, idmap: "IdMap") -> KnowledgeGraph:
    """Read a whitespace-separated edge list of raw ids.

    Self-loops and edges naming ids unknown to ``idmap`` are skipped, each
    with a warning giving the count.
    """
    pairs = []
    self_loops = unknown = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected two ids, got {line!r}")
            a, b = parts[0], parts[1]
            if a == b:
                self_loops += 1
                continue
            if a not in idmap.raw_to_index or b not in idmap.raw_to_index:
                unknown += 1
                continue
            pairs.append((idmap.raw_to_index[a], idmap.raw_to_index[b]))
    if self_loops:
        warnings.warn(f"{path}: rejected {self_loops} self-loop(s)", stacklevel=2)
    if unknown:
        warnings.warn(f"{path}: skipped {unknown} edge(s) with unknown ids", stacklevel=2)
    return KnowledgeGraph.from_edges(len(idmap), np.asarray(pairs, dtype=np.int64).reshape(-1, 2))


def save_edgelist(graph: KnowledgeGraph, path, idmap: "IdMap | None" = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for j, k in graph.edge_array():
            if idmap is None:
                fh.write(f"{j}\t{k}\n")
            else:
                fh.write(f"{idmap.index_to_raw[j]}\t{idmap.index_to_raw[k]}\n")


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """Replacement distribution for one embedding table.

    Use the :meth:`identity`, :meth:`uniform` and :meth:`from_graph`
    constructors rather than the raw initializer.
    """

    kind: str
    num_nodes: int
    p0: float = 0.0
    rho: float = 1.0
    graph: KnowledgeGraph | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (IDENTITY, UNIFORM, GRAPH):
            raise ValueError(f"unknown transition kind {self.kind!r}")
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be >= 1")
        if not 0.0 <= self.p0 < 1.0:
            raise ValueError(f"p0 must lie in [0, 1), got {self.p0}")
        if self.rho < 1.0:
            raise ValueError(f"rho must be >= 1, got {self.rho}")
        if self.kind == GRAPH:
            if self.graph is None:
                raise ValueError("graph transition needs a KnowledgeGraph")
            if self.graph.num_nodes != self.num_nodes:
                raise ValueError(
                    f"graph has {self.graph.num_nodes} nodes, table has {self.num_nodes}"
                )

    @classmethod
    def identity(cls, num_nodes: int) -> "TransitionModel":
        return cls(IDENTITY, num_nodes)

    @classmethod
    def uniform(cls, num_nodes: int, p0: float) -> "TransitionModel":
        return cls(UNIFORM, num_nodes, p0=float(p0))

    @classmethod
    def from_graph(cls, graph: KnowledgeGraph, p0: float, rho: float) -> "TransitionModel":
        return cls(GRAPH, graph.num_nodes, p0=float(p0), rho=float(rho), graph=graph)

    @property
    def is_identity(self) -> bool:
        return self.kind == IDENTITY or self.p0 == 0.0 or self.num_nodes == 1

    def _check(self, *idx):
        for i in idx:
            if not 0 <= i < self.num_nodes:
                raise IndexError(f"index {i} outside [0, {self.num_nodes})")

    def _normalizer(self, degree):
        return self.rho * degree + (self.num_nodes - 1 - degree)

    def prob(self, j: int, k: int) -> float:
        self._check(j, k)
        if self.is_identity:
            return 1.0 if j == k else 0.0
        if j == k:
            return 1.0 - self.p0
        n = self.num_nodes
        if self.kind == UNIFORM:
            return self.p0 / (n - 1)
        d = int(self.graph.degrees[j])
        z = self._normalizer(d)
        if self.graph.has_edge(j, k):
            return self.p0 * self.rho / z
        return self.p0 / z

    def prob_many(self, j, k) -> np.ndarray:
        """Vectorised :meth:`prob` over equal-shape index arrays."""
        j = np.asarray(j, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        same = j == k
        if self.is_identity:
            return same.astype(np.float64)
        if self.kind == UNIFORM:
            off = np.full(j.shape, self.p0 / (self.num_nodes - 1))
        else:
            z = self._normalizer(self.graph.degrees[j].astype(np.float64))
            off = np.where(self.graph.has_edge(j, k), self.p0 * self.rho / z, self.p0 / z)
        return np.where(same, 1.0 - self.p0, off)

    def row(self, j: int) -> np.ndarray:
        """Dense probability row ``p(j, .)``."""
        self._check(j)
        n = self.num_nodes
        out = np.zeros(n)
        if self.is_identity:
            out[j] = 1.0
            return out
        if self.kind == UNIFORM:
            out[:] = self.p0 / (n - 1)
        else:
            d = int(self.graph.degrees[j])
            z = self._normalizer(d)
            out[:] = self.p0 / z
            out[self.graph.neighbors(j)] = self.p0 * self.rho / z
        out[j] = 1.0 - self.p0
        return out

    def matrix(self) -> np.ndarray:
        """Dense N x N transition matrix; for small tables and tests only."""
        return np.stack([self.row(j) for j in range(self.num_nodes)])

    def apply(self, values) -> np.ndarray:
        """Row-wise expectation ``P @ values`` without forming ``P``."""
        x = np.asarray(values, dtype=np.float64)
        if self.is_identity:
            return x.copy()
        n = self.num_nodes
        total = x.sum(axis=0)
        if self.kind == UNIFORM:
            return (1.0 - self.p0) * x + self.p0 / (n - 1) * (total - x)
        deg = self.graph.degrees.astype(np.float64)
        z = self._normalizer(deg)
        shape = (-1,) + (1,) * (x.ndim - 1)
        nb = (self.graph.to_scipy() @ x.reshape(n, -1)).reshape(x.shape)
        rest = total - x - nb
        return (
            (1.0 - self.p0) * x
            + (self.p0 * self.rho / z).reshape(shape) * nb
            + (self.p0 / z).reshape(shape) * rest
        )

    def sample(self, js, rng: np.random.Generator) -> np.ndarray:
        """Draw one replacement for every index in ``js``.

        Consumes no randomness when the model is the identity.
        """
        js = np.asarray(js, dtype=np.int64)
        out = js.copy()
        if self.is_identity or js.size == 0:
            return out
        flat_in = js.reshape(-1)
        flat = out.reshape(-1)
        move = np.flatnonzero(rng.random(flat.size) < self.p0)
        if move.size == 0:
            return out
        src = flat_in[move]
        if self.kind == UNIFORM:
            k = rng.integers(0, self.num_nodes - 1, size=move.size)
            flat[move] = k + (k >= src)
            return out
        deg = self.graph.degrees[src]
        z = self._normalizer(deg)
        to_nb = rng.random(move.size) * z < self.rho * deg
        nb = np.flatnonzero(to_nb)
        if nb.size:
            d = deg[nb]
            off = np.minimum((rng.random(nb.size) * d).astype(np.int64), d - 1)
            flat[move[nb]] = self.graph.indices[self.graph.indptr[src[nb]] + off]
        other = np.flatnonzero(~to_nb)
        if other.size:
            flat[move[other]] = self._sample_non_neighbors(src[other], rng)
        return out

    @cached_property
    def _dense_rows(self) -> np.ndarray:
        n = self.num_nodes
        accept = (n - 1 - self.graph.degrees) / n
        return accept < _REJECTION_MIN_ACCEPT

    @cached_property
    def _excluded_keys(self) -> np.ndarray:
        # per node: sorted adj(j) + {j}, stored as e_i - i so that the r-th
        # complement element is r + #{i : e_i - i <= r}
        g = self.graph
        n = self.num_nodes
        stride = n + 1
        chunks = []
        for j in range(n):
            ex = np.sort(np.append(g.neighbors(j), j))
            chunks.append(j * stride + (ex - np.arange(len(ex))))
        return np.concatenate(chunks)

    def _sample_non_neighbors(self, src: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = self.num_nodes
        res = np.empty(src.size, dtype=np.int64)
        dense = self._dense_rows[src]
        sparse_idx = np.flatnonzero(~dense)
        pending = sparse_idx
        while pending.size:
            cand = rng.integers(0, n, size=pending.size)
            j = src[pending]
            ok = (cand != j) & ~np.atleast_1d(self.graph.has_edge(j, cand))
            res[pending[ok]] = cand[ok]
            pending = pending[~ok]
        dense_idx = np.flatnonzero(dense)
        if dense_idx.size:
            j = src[dense_idx]
            m = n - 1 - self.graph.degrees[j]
            r = rng.integers(0, m)
            stride = n + 1
            keys = self._excluded_keys
            starts = self.graph.indptr[j] + j  # each row holds d_j + 1 entries
            below = np.searchsorted(keys, j * stride + r, side="right") - starts
            res[dense_idx] = r + below
        return res


def transition_prob(tm: TransitionModel, j: int, k: int) -> float:
    return tm.prob(j, k)


def sample_replacement(tm: TransitionModel, j: int, rng: np.random.Generator, size: int | None = None):
    """Draw ``k ~ p(j, .)`` for a single index; ``size`` gives that many i.i.d. draws."""
    tm._check(j)
    if size is None:
        return int(tm.sample(np.array([j]), rng)[0])
    return tm.sample(np.full(int(size), j, dtype=np.int64), rng)


def sample_joint(tms: Sequence[TransitionModel], js: Sequence[int], rng: np.random.Generator,
                 size: int | None = None):
    """Independent per-table replacement of a joint index ``(j_1, ..., j_M)``.

    Returns a list of ints, or with ``size`` an ``(size, M)`` array.
    """
    if len(tms) != len(js):
        raise ValueError(f"{len(tms)} transition models for {len(js)} indices")
    if size is None:
        return [sample_replacement(tm, j, rng) for tm, j in zip(tms, js)]
    return np.stack([sample_replacement(tm, j, rng, size) for tm, j in zip(tms, js)], axis=1)
