"""Worker-firm mobility networks: connected sets, pruning and split samples.

Firms are vertices and every mover contributes the edges between the
consecutive firms they work at, so parallel edges are common.  A worker
"breaks" the network when deleting all of their edges disconnects it; for
workers with a single move this is exactly a bridge of the multigraph.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .design import DesignMatrix, Panel, id_sort_key, sorted_ids
from .errors import DisconnectedGraph, NoPath, ValidationError

SUBSAMPLE_CAP = 100


@dataclass
class MobilityGraph:
    firms: list
    movers: dict  # worker -> tuple of firms visited (consecutive duplicates removed)
    stayers: dict = field(default_factory=dict)  # worker -> firm

    @classmethod
    def from_panel(cls, panel: Panel) -> "MobilityGraph":
        movers, stayers = {}, {}
        for g, idx in panel.group_index().items():
            seq = []
            for i in idx:
                j = panel.firm[i]
                if not seq or seq[-1] != j:
                    seq.append(j)
            if len(seq) > 1:
                movers[g] = tuple(seq)
            else:
                stayers[g] = seq[0]
        return cls(sorted_ids(panel.firm.tolist()), movers, stayers)

    @classmethod
    def from_edges(cls, edges, firms=None, stayers=None) -> "MobilityGraph":
        """``edges`` is an iterable of (worker, firm_a, firm_b)."""
        movers = {w: (a, b) for w, a, b in edges}
        fs = set(firms or [])
        for a, b in movers.values():
            fs.update((a, b))
        stayers = dict(stayers or {})
        fs.update(stayers.values())
        return cls(sorted_ids(fs), movers, stayers)

    @property
    def workers(self) -> list:
        return list(self.movers) + list(self.stayers)

    def edges(self):
        for w, seq in self.movers.items():
            for a, b in zip(seq[:-1], seq[1:]):
                yield w, a, b

    def drop_workers(self, workers) -> "MobilityGraph":
        drop = set(workers)
        return MobilityGraph(list(self.firms), {w: s for w, s in self.movers.items() if w not in drop},
                             {w: j for w, j in self.stayers.items() if w not in drop})

    def restrict_firms(self, firms) -> "MobilityGraph":
        keep = set(firms)
        movers = {w: s for w, s in self.movers.items() if all(j in keep for j in s)}
        stayers = {w: j for w, j in self.stayers.items() if j in keep}
        return MobilityGraph(sorted_ids(keep), movers, stayers)

    def summary(self) -> dict:
        return {"firms": len(self.firms), "workers": len(self.movers) + len(self.stayers),
                "movers": len(self.movers)}


# ---------------------------------------------------------------------------
# connectivity
# ---------------------------------------------------------------------------

def _components(firms, edge_list):
    index = {j: i for i, j in enumerate(firms)}
    parent = list(range(len(firms)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edge_list:
        ra, rb = find(index[a]), find(index[b])
        if ra != rb:
            parent[ra] = rb
    comps: dict = {}
    for j in firms:
        comps.setdefault(find(index[j]), []).append(j)
    return list(comps.values())


def is_connected(graph: MobilityGraph) -> bool:
    if not graph.firms:
        return True
    return len(_components(graph.firms, [(a, b) for _, a, b in graph.edges()])) == 1


def largest_connected_component(graph: MobilityGraph) -> MobilityGraph:
    """Keep the component with most vertices (firms plus workers); ties go to
    the component holding the lowest firm id."""
    if not graph.firms:
        return graph
    comps = _components(graph.firms, [(a, b) for _, a, b in graph.edges()])
    member = {j: c for c, comp in enumerate(comps) for j in comp}
    size = [len(comp) for comp in comps]
    for w, seq in graph.movers.items():
        size[member[seq[0]]] += 1
    for w, j in graph.stayers.items():
        size[member[j]] += 1
    lowest = [min(comp, key=id_sort_key) for comp in comps]
    best = min(range(len(comps)), key=lambda c: (-size[c], id_sort_key(lowest[c])))
    return graph.restrict_firms(comps[best])


def bridges(firms, edges) -> set:
    """Edge ids that are bridges of an undirected multigraph.

    ``edges`` is a list of (edge_id, a, b); parallel edges are never bridges.
    Iterative Tarjan low-link search.
    """
    index = {j: i for i, j in enumerate(firms)}
    adj = [[] for _ in firms]
    for eid, a, b in edges:
        ia, ib = index[a], index[b]
        adj[ia].append((ib, eid))
        adj[ib].append((ia, eid))
    disc = [-1] * len(firms)
    low = [0] * len(firms)
    out = set()
    timer = 0
    for root in range(len(firms)):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, None, iter(adj[root]))]
        while stack:
            v, parent_edge, it = stack[-1]
            advanced = False
            for u, eid in it:
                if eid == parent_edge:
                    continue
                if disc[u] < 0:
                    disc[u] = low[u] = timer
                    timer += 1
                    stack.append((u, eid, iter(adj[u])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[u])
            if advanced:
                continue
            stack.pop()
            if stack:
                p = stack[-1][0]
                low[p] = min(low[p], low[v])
                if low[v] > disc[p]:
                    out.add(parent_edge)
    return out


def cut_workers(graph: MobilityGraph) -> set:
    """Movers whose removal disconnects the firm network (articulation workers)."""
    all_edges = [((w, t), a, b) for w, seq in graph.movers.items()
                 for t, (a, b) in enumerate(zip(seq[:-1], seq[1:]))]
    hit = bridges(graph.firms, all_edges) if all_edges else set()
    # a single-move worker is cut exactly when its edge is a bridge
    cut = {w for w, t in hit if len(graph.movers[w]) == 2}
    for w, seq in graph.movers.items():
        if len(seq) > 2:
            rest = [(a, b) for v, a, b in graph.edges() if v != w]
            if len(_components(graph.firms, rest)) > 1:
                cut.add(w)
    return cut


def leave_one_out_connected(graph: MobilityGraph, max_rounds: int = 10_000) -> MobilityGraph:
    """Drop every articulation worker and keep the largest component,
    repeating until no articulation worker is left."""
    if not is_connected(graph):
        raise DisconnectedGraph("leave-one-out pruning needs a connected network")
    for _ in range(max_rounds):
        cut = cut_workers(graph)
        if not cut:
            return graph
        graph = largest_connected_component(graph.drop_workers(cut))
    raise ValidationError("leave-one-out pruning did not settle")


def leave_two_out_connected(graph: MobilityGraph, max_rounds: int = 10_000) -> MobilityGraph:
    """Repeat: collect workers that become articulation points once any single
    worker is removed, delete them, re-extract and re-prune, until stable."""
    for _ in range(max_rounds):
        doomed = set()
        for g in list(graph.movers):
            doomed |= cut_workers(graph.drop_workers([g]))
        if not doomed:
            return graph
        reduced = largest_connected_component(graph.drop_workers(doomed))
        graph = leave_one_out_connected(reduced)
    raise ValidationError("leave-two-out pruning did not settle")


def prune(graph: MobilityGraph, level: str = "loo"):
    """Largest component then leave-one-out (and optionally leave-two-out)
    pruning.  Returns the pruned graph and per-stage counts."""
    stages = [("input", graph.summary())]
    g = largest_connected_component(graph)
    stages.append(("connected", g.summary()))
    g = leave_one_out_connected(g)
    stages.append(("leave_one_out", g.summary()))
    if level == "l2o":
        g = leave_two_out_connected(g)
        stages.append(("leave_two_out", g.summary()))
    elif level != "loo":
        raise ValidationError(f"unknown pruning level {level!r}")
    return g, stages


# ---------------------------------------------------------------------------
# shortest paths and split samples
# ---------------------------------------------------------------------------

class _EdgeIndex:
    """Firm adjacency with the list of single-move workers on each firm pair."""

    def __init__(self, graph: MobilityGraph):
        self.pair_workers: dict = {}
        self.adj: dict = {j: set() for j in graph.firms}
        self.endpoints: dict = {}
        for w, seq in graph.movers.items():
            if len(seq) != 2:
                raise ValidationError("split samples need workers with a single move")
            a, b = seq
            key = (a, b) if id_sort_key(a) <= id_sort_key(b) else (b, a)
            self.pair_workers.setdefault(key, []).append(w)
            self.adj[a].add(b)
            self.adj[b].add(a)
            self.endpoints[w] = key
        for key in self.pair_workers:
            self.pair_workers[key].sort(key=id_sort_key)
        self.sorted_adj = {j: sorted(nb, key=id_sort_key) for j, nb in self.adj.items()}

    @staticmethod
    def key(a, b):
        return (a, b) if id_sort_key(a) <= id_sort_key(b) else (b, a)

    def available(self, a, b, removed):
        return [w for w in self.pair_workers.get(self.key(a, b), ()) if w not in removed]

    def shortest_path(self, source, target, removed):
        """Lexicographically smallest firm sequence among shortest paths."""
        if source == target:
            return [source]
        dist = {target: 0}
        queue = deque([target])
        while queue and source not in dist:
            v = queue.popleft()
            for u in self.sorted_adj[v]:
                if u not in dist and self.available(u, v, removed):
                    dist[u] = dist[v] + 1
                    queue.append(u)
        if source not in dist:
            return None
        path = [source]
        while path[-1] != target:
            v = path[-1]
            for u in self.sorted_adj[v]:
                if dist.get(u) == dist[v] - 1 and self.available(v, u, removed):
                    path.append(u)
                    break
        return path


def edge_disjoint_paths(graph: MobilityGraph, worker, rng=None, cap: int = SUBSAMPLE_CAP,
                        _index: Optional[_EdgeIndex] = None):
    """Two disjoint sets of workers, each connecting the two firms of ``worker``.

    The first shortest path (avoiding ``worker``) contributes one randomly
    chosen worker per edge to the first set; all workers on the next
    shortest path go to the second set; the remaining workers on the first
    path join the first set; further paths alternate between the sets until
    none remain or a set reaches ``cap`` workers.
    """
    rng = np.random.default_rng(rng)
    index = _index or _EdgeIndex(graph)
    if worker not in index.endpoints:
        raise ValidationError(f"{worker!r} is not a mover")
    j, jp = graph.movers[worker]
    removed = {worker}
    first = index.shortest_path(j, jp, removed)
    if first is None:
        raise NoPath(f"no path between {j!r} and {jp!r} once {worker!r} is removed")
    s1, s2 = [], []
    for a, b in zip(first[:-1], first[1:]):
        options = index.available(a, b, removed)
        s1.append(options[int(rng.integers(len(options)))])
    removed.update(s1)
    second = index.shortest_path(j, jp, removed)
    if second is not None:
        for a, b in zip(second[:-1], second[1:]):
            s2.extend(index.available(a, b, removed))
        removed.update(s2)
    for a, b in zip(first[:-1], first[1:]):
        extra = index.available(a, b, removed)
        s1.extend(extra)
        removed.update(extra)
    target = 1
    while len(s1) < cap and len(s2) < cap:
        path = index.shortest_path(j, jp, removed)
        if path is None:
            break
        chosen = []
        for a, b in zip(path[:-1], path[1:]):
            chosen.extend(index.available(a, b, removed))
        removed.update(chosen)
        (s1 if target == 1 else s2).extend(chosen)
        target = 2 if target == 1 else 1
    return s1, s2


def detour_lengths(graph: MobilityGraph) -> dict:
    """For each single-move worker, the length of the shortest path joining
    their two firms once they are removed (``inf`` if none)."""
    index = _EdgeIndex(graph)
    out = {}
    for w, (a, b) in graph.movers.items():
        path = index.shortest_path(a, b, {w})
        out[w] = np.inf if path is None else len(path) - 1
    return out


@dataclass
class SplitSamplePlan:
    """Two leave-own-out linear predictors per observation.

    ``P1[i, l]`` and ``P2[i, l]`` are the weights observation ``l`` gets in the
    two predictions of ``x_i'beta``; ``Q[i]`` marks rows whose second
    predictor could not be built (its row of ``P2`` is zero).
    """

    P1: sp.csr_matrix
    P2: sp.csr_matrix
    Q: np.ndarray
    subsamples: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.P1.shape[0]

    def pair_cases(self) -> np.ndarray:
        """Classify ordered pairs (i, l) by which product estimator of
        sigma_i^2 sigma_l^2 is available (see ``inference.product_variances``).

        1: the two leave-pair-out variance estimates use disjoint samples;
        2: neither predictor of i uses l; 3: neither predictor of l uses i;
        4-6: no unbiased product exists (centred outcomes substitute for the
        side(s) that cannot be left out).  The diagonal is 0.
        """
        n = self.n
        Z1 = (self.P1 != 0).astype(np.int32)
        Z2 = (self.P2 != 0).astype(np.int32)
        U1 = Z1.toarray().astype(bool)
        U2 = Z2.toarray().astype(bool)
        O = {(a, b): np.asarray((Za @ Zb.T).toarray()) > 0
             for a, Za in ((1, Z1), (2, Z2)) for b, Zb in ((1, Z1), (2, Z2))}
        si2 = U1                      # i leaves l out with predictor 2 when predictor 1 uses l
        sl2 = U1.T                    # the same from l's side
        overlap = np.where(si2, np.where(sl2, O[2, 2], O[2, 1]), np.where(sl2, O[1, 2], O[1, 1]))
        Q = self.Q.astype(bool)
        Qil = U1 & Q[:, None]
        Qli = Qil.T
        uses_l = U1 | U2
        uses_i = uses_l.T
        cases = np.full((n, n), 6, dtype=np.int8)
        free = np.ones((n, n), dtype=bool)
        for code, cond in (
            (1, ~overlap & ~Qil & ~Qli),
            (2, ~uses_l & ~Q[:, None] & ~Qli),
            (3, ~uses_i & ~Q[None, :] & ~Qil),
            (4, ~Qil),
            (5, ~Qli),
        ):
            hit = free & cond
            cases[hit] = code
            free &= ~hit
        np.fill_diagonal(cases, 0)
        return cases

    def check(self, X, tol: float = 1e-8) -> dict:
        """Verify disjointness, zero own weight and unbiasedness on the
        column space of ``X``; returns the largest violation of each."""
        X = sp.csr_matrix(X)
        prod = self.P1.multiply(self.P2)
        own = max(abs(self.P1.diagonal()).max(initial=0), abs(self.P2.diagonal()).max(initial=0))
        Xd = X.toarray()
        scale = max(1.0, np.abs(Xd).max())
        err1 = np.abs(self.P1 @ Xd - Xd).max(initial=0) / scale
        mask = ~self.Q.astype(bool)
        err2 = np.abs((self.P2 @ Xd - Xd)[mask]).max(initial=0) / scale if mask.any() else 0.0
        out = {"overlap": float(abs(prod).max()) if prod.nnz else 0.0, "own_weight": float(own),
               "unbiased_1": float(err1), "unbiased_2": float(err2)}
        out["ok"] = out["overlap"] == 0 and out["own_weight"] == 0 and err1 <= tol and err2 <= tol
        return out


def _subsample_weights(X: sp.csr_matrix, rows, i):
    Xs = X[rows]
    cols = np.unique(np.concatenate([Xs.indices, X[i].indices]))
    Xd = Xs[:, cols].toarray()
    xi = X[i][:, cols].toarray().ravel()
    G = Xd.T @ Xd
    return Xd @ (np.linalg.pinv(G, rcond=1e-10, hermitian=True) @ xi)


def build_split_plan(design: DesignMatrix, graph: MobilityGraph, seed: int = 0,
                     cap: int = SUBSAMPLE_CAP) -> SplitSamplePlan:
    """Split-sample predictors for a first-difference two-way design."""
    if design.kind != "first_difference" or any(lab != "firm" for lab in design.labels):
        raise ValidationError("split plans need a first-difference design with firm columns only")
    row_of = {w: r for r, w in enumerate(design.row_ids.tolist())}
    index = _EdgeIndex(graph)
    n = design.n
    rows1, cols1, vals1, rows2, cols2, vals2 = [], [], [], [], [], []
    Q = np.zeros(n, dtype=bool)
    subsamples = {}
    for r, w in enumerate(design.row_ids.tolist()):
        if w not in graph.movers:
            continue
        rng = np.random.default_rng([seed, r])
        s1, s2 = edge_disjoint_paths(graph, w, rng, cap, index)
        r1 = [row_of[v] for v in s1]
        r2 = [row_of[v] for v in s2]
        subsamples[r] = (r1, r2)
        wts = _subsample_weights(design.X, r1, r)
        rows1 += [r] * len(r1)
        cols1 += r1
        vals1 += wts.tolist()
        if r2:
            wts = _subsample_weights(design.X, r2, r)
            rows2 += [r] * len(r2)
            cols2 += r2
            vals2 += wts.tolist()
        else:
            Q[r] = True
    P1 = sp.csr_matrix((vals1, (rows1, cols1)), shape=(n, n))
    P2 = sp.csr_matrix((vals2, (rows2, cols2)), shape=(n, n))
    for P in (P1, P2):
        P.data[np.abs(P.data) < 1e-13] = 0.0
        P.eliminate_zeros()
    return SplitSamplePlan(P1, P2, Q, subsamples)


def group_split_plan(design: DesignMatrix) -> SplitSamplePlan:
    """Split-sample predictors for a one-way layout (group dummies only).

    Members of a group are arranged cyclically in row order; observation i
    is predicted by the next member and, separately, by the previous one.
    Groups of four or more then leave no pair without an unbiased product
    estimator; groups of two only get the first predictor.
    """
    if any(lab != "group" for lab in design.labels):
        raise ValidationError("group split plans need a design of group dummies only")
    members: dict = {}
    for i, c in enumerate(design.py_person.tolist()):
        members.setdefault(c, []).append(i)
    n = design.n
    r1, c1, r2, c2 = [], [], [], []
    Q = np.zeros(n, dtype=bool)
    for rows in members.values():
        T = len(rows)
        if T < 2:
            raise ValidationError("every group needs at least two members")
        for pos, i in enumerate(rows):
            r1.append(i)
            c1.append(rows[(pos + 1) % T])
            if T >= 3:
                r2.append(i)
                c2.append(rows[(pos - 1) % T])
            else:
                Q[i] = True
    P1 = sp.csr_matrix((np.ones(len(r1)), (r1, c1)), shape=(n, n))
    P2 = sp.csr_matrix((np.ones(len(r2)), (r2, c2)), shape=(n, n))
    return SplitSamplePlan(P1, P2, Q)
