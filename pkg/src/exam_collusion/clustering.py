"""Agglomerative hierarchical clustering and cophenetic diagnostics."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InputError, InvariantError, check_choice, upper_triangle
from .dissimilarity import as_dissimilarity_matrix

LINKAGES = ("single", "complete", "average")
# select_linkage prefers earlier entries when correlations tie.
LINKAGE_PREFERENCE = ("average", "single", "complete")
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Node:
    """Internal dendrogram node. Leaves are ``0..N-1``; internal nodes are
    numbered ``N..2N-2`` in merge order."""

    id: int
    left: int
    right: int
    height: float
    members: tuple

    @property
    def size(self):
        return len(self.members)


class Dendrogram:
    """Binary merge tree over ``ids``.

    ``left`` is always the child whose smallest leaf index is smaller.
    """

    def __init__(self, ids, nodes, linkage=None):
        self.ids = tuple(ids)
        self.nodes = tuple(nodes)
        self.linkage = linkage
        n = len(self.ids)
        if len(self.nodes) != n - 1:
            raise InvariantError(f"{n} leaves need {n - 1} internal nodes, got {len(self.nodes)}")

    @property
    def n_leaves(self):
        return len(self.ids)

    @property
    def root(self):
        return self.nodes[-1]

    def node(self, node_id):
        n = self.n_leaves
        if node_id < n:
            return None
        return self.nodes[node_id - n]

    def members(self, node_id):
        if node_id < self.n_leaves:
            return (node_id,)
        return self.node(node_id).members

    def height(self, node_id):
        if node_id < self.n_leaves:
            return 0.0
        return self.node(node_id).height

    def leaf_order(self):
        """Leaves in recursive left-to-right order."""
        n = self.n_leaves
        if n == 1:
            return [0]
        out, stack = [], [self.root.id]
        while stack:
            k = stack.pop()
            if k < n:
                out.append(k)
            else:
                node = self.node(k)
                stack.append(node.right)
                stack.append(node.left)
        return out

    def merges(self):
        """Merge sequence as ``[(left_members, right_members, height), ...]``."""
        return [(self.members(nd.left), self.members(nd.right), nd.height) for nd in self.nodes]

    def to_linkage_matrix(self):
        """SciPy-style ``(N-1, 4)`` linkage matrix."""
        return np.array(
            [[nd.left, nd.right, nd.height, nd.size] for nd in self.nodes], dtype=float
        ).reshape(-1, 4)

    def scaled(self, c):
        nodes = [Node(nd.id, nd.left, nd.right, nd.height * c, nd.members) for nd in self.nodes]
        return Dendrogram(self.ids, nodes, self.linkage)

    def to_dict(self):
        return {
            "ids": list(self.ids),
            "linkage": self.linkage,
            "nodes": [
                {
                    "id": nd.id,
                    "left": nd.left,
                    "right": nd.right,
                    "height": float(nd.height),
                    "members": [self.ids[m] for m in nd.members],
                }
                for nd in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        ids = list(doc["ids"])
        index = {sid: k for k, sid in enumerate(ids)}
        nodes = [
            Node(
                int(d["id"]),
                int(d["left"]),
                int(d["right"]),
                float(d["height"]),
                tuple(sorted(index[m] for m in d["members"])),
            )
            for d in doc["nodes"]
        ]
        tree = cls(ids, nodes, doc.get("linkage"))
        check_dendrogram(tree)
        return tree

    def to_newick(self):
        """Newick string; branch length = parent height minus child height."""
        n = self.n_leaves

        def render(k, parent_height):
            length = parent_height - self.height(k)
            if k < n:
                label = _newick_label(self.ids[k])
            else:
                nd = self.node(k)
                h = nd.height
                label = f"({render(nd.left, h)},{render(nd.right, h)})"
            return f"{label}:{_fmt(length)}"

        if n == 1:
            return _newick_label(self.ids[0]) + ";"
        root = self.root
        return f"({render(root.left, root.height)},{render(root.right, root.height)});"


def _fmt(x):
    return repr(float(x))


def _newick_label(name):
    if re.search(r"[\s(),:;'\[\]]", name):
        return "'" + name.replace("'", "''") + "'"
    return name


def check_dendrogram(tree):
    """Raise :class:`InvariantError` unless ``tree`` is a well-formed,
    inversion-free binary merge tree."""
    n = tree.n_leaves
    seen = set()
    for k, nd in enumerate(tree.nodes):
        if nd.id != n + k:
            raise InvariantError(f"node {k} has id {nd.id}, expected {n + k}")
        for child in (nd.left, nd.right):
            if child >= nd.id or child in seen:
                raise InvariantError(f"node {nd.id} has invalid child {child}")
            seen.add(child)
            if tree.height(child) > nd.height:
                raise InvariantError(f"height inversion at node {nd.id}")
        union = tuple(sorted(tree.members(nd.left) + tree.members(nd.right)))
        if union != tuple(nd.members):
            raise InvariantError(f"node {nd.id} members are not the union of its children")
    if n > 1 and len(tree.root.members) != n:
        raise InvariantError("root does not cover all leaves")


def agglomerate(matrix, linkage="average"):
    """Agglomerative clustering of a dissimilarity matrix.

    Inter-cluster distances are updated with the Lance-Williams formulas:
    minimum (single), maximum (complete) or the size-weighted mean (average,
    i.e. UPGMA). When several cluster pairs share the minimal distance, the
    pair whose (smallest leaf index, smallest leaf index) identifier is
    lexicographically smallest is merged first.

    Returns a :class:`Dendrogram`.
    """
    check_choice(linkage, LINKAGES, "linkage")
    dm = as_dissimilarity_matrix(matrix)
    n = len(dm.ids)
    if n < 2:
        raise InputError("need at least 2 objects to cluster")

    # Each active cluster lives in the slot of its smallest leaf index, so
    # row-major argmin over the upper triangle implements the tie-break.
    dist = dm.values.copy()
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    work = np.where(upper, dist, np.inf)
    size = np.ones(n, dtype=np.int64)
    node_of = list(range(n))
    members = [(i,) for i in range(n)]
    active = np.ones(n, dtype=bool)
    nodes = []

    for step in range(n - 1):
        flat = int(np.argmin(work))
        a, b = divmod(flat, n)
        height = float(work[a, b])
        if not (a < b and active[a] and active[b]) or not np.isfinite(height):
            raise InvariantError("agglomeration selected an inactive pair")

        da, db = dist[a], dist[b]
        if linkage == "single":
            new = np.minimum(da, db)
        elif linkage == "complete":
            new = np.maximum(da, db)
        else:
            new = (size[a] * da + size[b] * db) / (size[a] + size[b])

        merged = tuple(sorted(members[a] + members[b]))
        nodes.append(Node(n + step, node_of[a], node_of[b], height, merged))

        dist[a, :] = new
        dist[:, a] = new
        dist[a, a] = 0.0
        active[b] = False
        size[a] += size[b]
        members[a] = merged
        node_of[a] = n + step

        work[b, :] = np.inf
        work[:, b] = np.inf
        row = np.where(active & upper[a], new, np.inf)
        col = np.where(active & upper[:, a], new, np.inf)
        work[a, :] = row
        work[:, a] = col

    return Dendrogram(dm.ids, nodes, linkage)


def cophenetic_matrix(tree):
    """Height of the lowest common ancestor for every leaf pair."""
    n = tree.n_leaves
    t = np.zeros((n, n))
    for nd in tree.nodes:
        left = list(tree.members(nd.left))
        right = list(tree.members(nd.right))
        t[np.ix_(left, right)] = nd.height
        t[np.ix_(right, left)] = nd.height
    return t


def cophenetic_correlation(D, t):
    """Pearson correlation between original and cophenetic dissimilarities
    over all pairs ``i < j``."""
    d = np.asarray(getattr(D, "values", D), dtype=float)
    t = np.asarray(t, dtype=float)
    if d.shape != t.shape or d.ndim != 2:
        raise InputError(f"shape mismatch: {d.shape} vs {t.shape}")
    if d.shape[0] < 3:
        raise InputError("cophenetic correlation needs at least 3 leaves")
    x = upper_triangle(d)
    y = upper_triangle(t)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx <= 0.0 or syy <= 0.0:
        raise InputError("degenerate correlation input")
    c = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return min(1.0, max(-1.0, c))


def select_linkage(matrix):
    """Cluster with every linkage and pick the highest cophenetic correlation.

    Returns ``(best_linkage, {linkage: C}, {linkage: Dendrogram})``.
    Correlations within ``1e-12`` of the best count as ties and are resolved
    as average, then single, then complete.
    """
    dm = as_dissimilarity_matrix(matrix)
    if len(dm.ids) < 3:
        raise InputError("linkage selection needs at least 3 objects")
    trees = {lk: agglomerate(dm, lk) for lk in LINKAGES}
    scores = {lk: cophenetic_correlation(dm, cophenetic_matrix(trees[lk])) for lk in LINKAGES}
    top = max(scores.values())
    best = next(lk for lk in LINKAGE_PREFERENCE if scores[lk] >= top - TIE_TOLERANCE)
    return best, scores, trees


@dataclass(frozen=True)
class Cluster:
    node_id: int
    members: tuple
    height: float
    left: tuple
    right: tuple


def lowest_clusters(tree, k):
    """The ``k`` internal nodes of smallest height, ascending; ties keep
    merge order. Members are reported as ids."""
    n = tree.n_leaves
    if not 1 <= k <= n - 1:
        raise InputError(f"k must lie in [1, {n - 1}], got {k}")
    ranked = sorted(tree.nodes, key=lambda nd: (nd.height, nd.id))[:k]
    ids = tree.ids
    return [
        Cluster(
            nd.id,
            tuple(ids[m] for m in nd.members),
            nd.height,
            tuple(ids[m] for m in tree.members(nd.left)),
            tuple(ids[m] for m in tree.members(nd.right)),
        )
        for nd in ranked
    ]


def cut_tree(tree, n_clusters):
    """Flat labels from undoing the last ``n_clusters - 1`` merges."""
    n = tree.n_leaves
    if not 1 <= n_clusters <= n:
        raise InputError(f"n_clusters must lie in [1, {n}]")
    labels = np.arange(n)
    for nd in tree.nodes[: n - n_clusters]:
        labels[list(nd.members)] = min(nd.members)
    _, labels = np.unique(labels, return_inverse=True)
    return labels


class HierarchicalClustering(ClusterMixin, BaseEstimator):
    """Agglomerative clustering on a precomputed dissimilarity matrix.

    Parameters
    ----------
    linkage : {"auto", "single", "complete", "average"}
        ``auto`` picks the linkage with the highest cophenetic correlation.
    k_lowest : int
        Number of lowest merge nodes reported in ``lowest_clusters_``.
    n_clusters : int or None
        If set, ``labels_`` holds a flat partition with this many clusters.

    Attributes
    ----------
    dendrogram_, linkage_, cophenetic_matrix_, cophenetic_correlation_,
    cophenetic_correlations_ (only for ``auto``), lowest_clusters_, labels_
    """

    def __init__(self, linkage="auto", k_lowest=6, n_clusters=None):
        self.linkage = linkage
        self.k_lowest = k_lowest
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        check_choice(self.linkage, ("auto",) + LINKAGES, "linkage")
        dm = as_dissimilarity_matrix(X)
        n = len(dm.ids)
        if self.linkage == "auto":
            self.linkage_, self.cophenetic_correlations_, trees = select_linkage(dm)
            self.dendrogram_ = trees[self.linkage_]
        else:
            self.linkage_ = self.linkage
            self.dendrogram_ = agglomerate(dm, self.linkage)
            self.cophenetic_correlations_ = None
        check_dendrogram(self.dendrogram_)
        self.cophenetic_matrix_ = cophenetic_matrix(self.dendrogram_)
        self.cophenetic_correlation_ = (
            cophenetic_correlation(dm, self.cophenetic_matrix_) if n >= 3 else None
        )
        self.lowest_clusters_ = lowest_clusters(self.dendrogram_, min(self.k_lowest, n - 1))
        n_clusters = self.n_clusters if self.n_clusters is not None else 1
        self.labels_ = cut_tree(self.dendrogram_, n_clusters)
        self.n_features_in_ = n
        return self

    def lowest(self, k=None):
        check_is_fitted(self, "dendrogram_")
        return lowest_clusters(self.dendrogram_, k or self.k_lowest)
