"""Sum-of-trees machinery: trees, tree prior, MH tree moves and backfitting.

Trees live in fixed-capacity node arrays so the sweep can run inside numba.
For a forest of ``M`` trees each array has shape ``(M, capacity)``:

``var``     split feature, ``LEAF`` for a leaf, ``FREE`` for an unused slot
``cut``     split threshold; rows with ``x[var] <= cut`` go left
``left``, ``right``, ``parent``, ``depth``, ``mu`` (leaf value)

``leaf_of[m, i]`` is the leaf of tree ``m`` holding training row ``i`` and
``fits[m, i]`` its leaf value, so the partial residual for tree ``m`` is
``targets - (fits.sum(0) - fits[m])``.

Splitting rules are restricted to midpoints between consecutive distinct
training values of each feature. A rule is available at a node only if it
lies strictly inside the node's observed range, so no child is ever empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .stats import SeededRng

LEAF = -1
FREE = -2
GROW, PRUNE, CHANGE = 0, 1, 2
MOVE_NAMES = ("grow", "prune", "change")
DEFAULT_CAPACITY = 255


@dataclass
class BartHyper:
    """Tree-prior, leaf-prior and variance-prior settings.

    ``sigma_mu`` defaults to ``3 / (b sqrt(M))``, the latent-scale choice
    used for ordinal outcomes. ``lam`` may be left as None and filled in
    from the data by :func:`default_lambda`.
    """

    M: int = 200
    alpha: float = 0.95
    beta_depth: float = 2.0
    b: float = 2.0
    sigma_mu: float | None = None
    nu: float = 3.0
    lam: float | None = None
    proposal_mix: tuple = (0.28, 0.28, 0.44)

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("need at least one tree")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta_depth < 0:
            raise ValueError("beta_depth must be nonnegative")
        mix = np.asarray(self.proposal_mix, dtype=float)
        if mix.size != 3 or np.any(mix < 0) or abs(mix.sum() - 1) > 1e-12:
            raise ValueError("proposal_mix must be a probability vector over (grow, prune, change)")
        if self.sigma_mu is None:
            self.sigma_mu = 3.0 / (self.b * math.sqrt(self.M))

    @classmethod
    def continuous(cls, **kw) -> "BartHyper":
        """Leaf prior for targets rescaled to [-0.5, 0.5]."""
        h = cls(**kw)
        if "sigma_mu" not in kw:
            h.sigma_mu = 0.5 / (h.b * math.sqrt(h.M))
        return h


def split_prob(hyper: BartHyper, depth: int) -> float:
    """Prior probability that a node at ``depth`` is split."""
    return hyper.alpha * (1.0 + depth) ** (-hyper.beta_depth)


def default_lambda(targets, nu: float = 3.0, q: float = 0.9) -> float:
    """Scale putting prior mass ``q`` on variances below the sample variance."""
    from scipy import stats

    s2 = float(np.var(targets, ddof=1))
    return s2 * stats.chi2.ppf(1 - q, nu) / nu


def rescale_targets(y):
    """Map targets affinely onto [-0.5, 0.5]; returns (scaled, center, span)."""
    y = np.asarray(y, dtype=float)
    lo, hi = y.min(), y.max()
    span = hi - lo if hi > lo else 1.0
    center = 0.5 * (hi + lo)
    return (y - center) / span, center, span


@dataclass
class SplitRules:
    """Candidate thresholds per feature, padded with +inf."""

    cuts: np.ndarray
    ncuts: np.ndarray

    @classmethod
    def from_data(cls, X) -> "SplitRules":
        X = np.asarray(X, dtype=float)
        per = []
        for j in range(X.shape[1]):
            u = np.unique(X[:, j])
            per.append(0.5 * (u[1:] + u[:-1]))
        width = max(1, max(len(c) for c in per))
        cuts = np.full((X.shape[1], width), np.inf)
        for j, c in enumerate(per):
            cuts[j, :len(c)] = c
        return cls(cuts, np.array([len(c) for c in per], dtype=np.int64))


# ---------------------------------------------------------------------------
# jitted tree kernels (one tree at a time; arrays are rows of the forest)

@numba.njit(cache=True)
def _log_split(alpha, beta_d, d):
    return math.log(alpha) - beta_d * math.log(1.0 + d)


@numba.njit(cache=True)
def _log_nosplit(alpha, beta_d, d):
    return math.log(1.0 - alpha * (1.0 + d) ** (-beta_d))


@numba.njit(cache=True)
def _lml(n, s, sigma2, smu2):
    """Log marginal likelihood of a leaf (up to terms shared by all trees)."""
    v = sigma2 + n * smu2
    return 0.5 * math.log(sigma2 / v) + smu2 * s * s / (2.0 * sigma2 * v)


@numba.njit(cache=True)
def _valid_counts(X, rows, cuts, ncuts):
    p = X.shape[1]
    counts = np.zeros(p, dtype=np.int64)
    first = np.zeros(p, dtype=np.int64)
    if rows.size == 0:
        return counts, first
    for j in range(p):
        lo = X[rows[0], j]
        hi = lo
        for i in rows:
            x = X[i, j]
            if x < lo:
                lo = x
            elif x > hi:
                hi = x
        c = cuts[j, :ncuts[j]]
        a = np.searchsorted(c, lo, side="right")
        b = np.searchsorted(c, hi, side="left")
        if b > a:
            counts[j] = b - a
            first[j] = a
    return counts, first


@numba.njit(cache=True)
def _log_rule_prior(X, rows, cuts, ncuts, v, c):
    """log of 1/(p_adj * r) for rule (v, c) at a node holding ``rows``; -inf if invalid."""
    counts, first = _valid_counts(X, rows, cuts, ncuts)
    padj = 0
    for j in range(counts.size):
        if counts[j] > 0:
            padj += 1
    if counts[v] == 0:
        return -np.inf
    cv = cuts[v, first[v]:first[v] + counts[v]]
    ok = False
    for x in cv:
        if x == c:
            ok = True
            break
    if not ok:
        return -np.inf
    return -math.log(padj) - math.log(counts[v])


@numba.njit(cache=True)
def _draw_rule(gen, X, rows, cuts, ncuts):
    counts, first = _valid_counts(X, rows, cuts, ncuts)
    padj = 0
    for j in range(counts.size):
        if counts[j] > 0:
            padj += 1
    if padj == 0:
        return False, -1, 0.0
    pick = min(int(gen.random() * padj), padj - 1)
    v = -1
    for j in range(counts.size):
        if counts[j] > 0:
            if pick == 0:
                v = j
                break
            pick -= 1
    k = min(int(gen.random() * counts[v]), counts[v] - 1)
    return True, v, cuts[v, first[v] + k]


@numba.njit(cache=True)
def _mark_subtree(var, left, right, node):
    mark = np.zeros(var.size, dtype=np.bool_)
    stack = [node]
    while len(stack) > 0:
        k = stack.pop()
        mark[k] = True
        if var[k] >= 0:
            stack.append(left[k])
            stack.append(right[k])
    return mark


@numba.njit(cache=True)
def _rows_in(leaf_of, mark):
    cnt = 0
    for i in range(leaf_of.size):
        if mark[leaf_of[i]]:
            cnt += 1
    out = np.empty(cnt, dtype=np.int64)
    cnt = 0
    for i in range(leaf_of.size):
        if mark[leaf_of[i]]:
            out[cnt] = i
            cnt += 1
    return out


@numba.njit(cache=True)
def _route(X, i, var, cut, left, right, node):
    while var[node] >= 0:
        if X[i, var[node]] <= cut[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@numba.njit(cache=True)
def _tree_shape(var, left, right):
    nleaf = 0
    nnog = 0
    nint = 0
    nfree = 0
    for k in range(var.size):
        if var[k] == LEAF:
            nleaf += 1
        elif var[k] == FREE:
            nfree += 1
        else:
            nint += 1
            if var[left[k]] == LEAF and var[right[k]] == LEAF:
                nnog += 1
    return nleaf, nnog, nint, nfree


@numba.njit(cache=True)
def _pick(var, left, right, kind, count, gen):
    """Uniformly pick a node of ``kind`` (0 leaf, 1 nog, 2 internal)."""
    target = min(int(gen.random() * count), count - 1)
    for k in range(var.size):
        if var[k] == FREE:
            continue
        if kind == 0:
            hit = var[k] == LEAF
        elif kind == 1:
            hit = var[k] >= 0 and var[left[k]] == LEAF and var[right[k]] == LEAF
        else:
            hit = var[k] >= 0
        if hit:
            if target == 0:
                return k
            target -= 1
    return -1


@numba.njit(cache=True)
def propose_move(gen, mix, X, cuts, ncuts, var, cut, left, right, leaf_of, forced):
    """Draw a move; returns (move, node, v, c, log Hastings ratio, ok).

    ``forced`` >= 0 fixes the move type (used by tests). ``ok`` is False for
    a null proposal, such as PRUNE on a lone root.
    """
    if forced >= 0:
        move = forced
    else:
        u = gen.random()
        move = GROW if u < mix[0] else (PRUNE if u < mix[0] + mix[1] else CHANGE)
    nleaf, nnog, nint, nfree = _tree_shape(var, left, right)
    if move == GROW:
        node = _pick(var, left, right, 0, nleaf, gen)
        if nfree < 2:
            return move, node, -1, 0.0, 0.0, False
        rows = _rows_in(leaf_of, _mark_subtree(var, left, right, node))
        ok, v, c = _draw_rule(gen, X, rows, cuts, ncuts)
        if not ok:
            return move, node, -1, 0.0, 0.0, False
        par = -1
        for k in range(var.size):
            if var[k] >= 0 and (left[k] == node or right[k] == node):
                par = k
        nog_after = nnog + 1
        if par >= 0:
            sib = right[par] if left[par] == node else left[par]
            if var[sib] == LEAF:
                nog_after -= 1
        lr = math.log(mix[PRUNE]) - math.log(mix[GROW]) + math.log(nleaf) - math.log(nog_after)
        return move, node, v, c, lr, True
    if move == PRUNE:
        if nnog == 0:
            return move, -1, -1, 0.0, 0.0, False
        node = _pick(var, left, right, 1, nnog, gen)
        lr = math.log(mix[GROW]) - math.log(mix[PRUNE]) + math.log(nnog) - math.log(nleaf - 1)
        return move, node, -1, 0.0, lr, True
    if nint == 0:
        return move, -1, -1, 0.0, 0.0, False
    node = _pick(var, left, right, 2, nint, gen)
    rows = _rows_in(leaf_of, _mark_subtree(var, left, right, node))
    ok, v, c = _draw_rule(gen, X, rows, cuts, ncuts)
    return move, node, v, c, 0.0, ok


@numba.njit(cache=True)
def apply_move(move, node, v, c, X, var, cut, left, right, parent, depth, mu, leaf_of):
    if move == GROW:
        l = -1
        r = -1
        for k in range(var.size):
            if var[k] == FREE:
                if l < 0:
                    l = k
                else:
                    r = k
                    break
        var[node] = v
        cut[node] = c
        for k in (l, r):
            var[k] = LEAF
            parent[k] = node
            depth[k] = depth[node] + 1
            mu[k] = 0.0
            left[k] = -1
            right[k] = -1
        left[node] = l
        right[node] = r
        for i in range(leaf_of.size):
            if leaf_of[i] == node:
                leaf_of[i] = l if X[i, v] <= c else r
    elif move == PRUNE:
        l = left[node]
        r = right[node]
        for i in range(leaf_of.size):
            if leaf_of[i] == l or leaf_of[i] == r:
                leaf_of[i] = node
        var[l] = FREE
        var[r] = FREE
        var[node] = LEAF
        left[node] = -1
        right[node] = -1
        mu[node] = 0.0
    else:
        mark = _mark_subtree(var, left, right, node)
        var[node] = v
        cut[node] = c
        for i in range(leaf_of.size):
            if mark[leaf_of[i]]:
                leaf_of[i] = _route(X, i, var, cut, left, right, node)


@numba.njit(cache=True)
def _leaf_stats(var, leaf_of, resid):
    n = np.zeros(var.size, dtype=np.int64)
    s = np.zeros(var.size)
    for i in range(leaf_of.size):
        n[leaf_of[i]] += 1
        s[leaf_of[i]] += resid[i]
    return n, s


@numba.njit(cache=True)
def _tree_lml(var, n, s, sigma2, smu2):
    total = 0.0
    for k in range(var.size):
        if var[k] == LEAF:
            if n[k] == 0:
                return -np.inf
            total += _lml(n[k], s[k], sigma2, smu2)
    return total


@numba.njit(cache=True)
def _desc_rule_prior(X, cuts, ncuts, var, cut, left, right, leaf_of, node):
    """Sum of log rule priors over internal nodes strictly below ``node``."""
    total = 0.0
    mark = _mark_subtree(var, left, right, node)
    for k in range(var.size):
        if mark[k] and k != node and var[k] >= 0:
            rows = _rows_in(leaf_of, _mark_subtree(var, left, right, k))
            total += _log_rule_prior(X, rows, cuts, ncuts, var[k], cut[k])
            if total == -np.inf:
                return total
    return total


@numba.njit(cache=True)
def update_tree(gen, X, resid, sigma2, smu2, alpha, beta_d, mix, cuts, ncuts,
                var, cut, left, right, parent, depth, mu, leaf_of, fit, stats):
    """One MH tree move followed by conjugate leaf draws; updates ``fit`` in place."""
    move, node, v, c, log_ratio, ok = propose_move(gen, mix, X, cuts, ncuts, var, cut, left,
                                                   right, leaf_of, -1)
    stats[0, move] += 1
    if ok:
        n0, s0 = _leaf_stats(var, leaf_of, resid)
        old_lml = _tree_lml(var, n0, s0, sigma2, smu2)
        d = depth[node]
        if move == GROW:
            log_prior = (_log_split(alpha, beta_d, d) + 2.0 * _log_nosplit(alpha, beta_d, d + 1)
                         - _log_nosplit(alpha, beta_d, d))
        elif move == PRUNE:
            log_prior = (_log_nosplit(alpha, beta_d, d) - _log_split(alpha, beta_d, d)
                         - 2.0 * _log_nosplit(alpha, beta_d, d + 1))
        else:
            log_prior = -_desc_rule_prior(X, cuts, ncuts, var, cut, left, right, leaf_of, node)
        saved = (var.copy(), cut.copy(), left.copy(), right.copy(), parent.copy(),
                 depth.copy(), leaf_of.copy())
        apply_move(move, node, v, c, X, var, cut, left, right, parent, depth, mu, leaf_of)
        if move == CHANGE:
            log_prior += _desc_rule_prior(X, cuts, ncuts, var, cut, left, right, leaf_of, node)
        n1, s1 = _leaf_stats(var, leaf_of, resid)
        new_lml = _tree_lml(var, n1, s1, sigma2, smu2)
        log_acc = new_lml - old_lml + log_prior + log_ratio
        if log_acc > -np.inf and math.log(gen.random()) < log_acc:
            stats[1, move] += 1
        else:
            var[:] = saved[0]
            cut[:] = saved[1]
            left[:] = saved[2]
            right[:] = saved[3]
            parent[:] = saved[4]
            depth[:] = saved[5]
            leaf_of[:] = saved[6]
    n, s = _leaf_stats(var, leaf_of, resid)
    for k in range(var.size):
        if var[k] == LEAF:
            prec = 1.0 / smu2 + n[k] / sigma2
            mean = (s[k] / sigma2) / prec
            mu[k] = mean + gen.standard_normal() / math.sqrt(prec)
    for i in range(leaf_of.size):
        fit[i] = mu[leaf_of[i]]


@numba.njit(cache=True)
def sweep_kernel(gen, X, targets, sigma2, smu2, alpha, beta_d, mix, cuts, ncuts,
                 var, cut, left, right, parent, depth, mu, leaf_of, fits, stats):
    M, n = fits.shape
    total = np.zeros(n)
    for m in range(M):
        for i in range(n):
            total[i] += fits[m, i]
    resid = np.empty(n)
    for m in range(M):
        for i in range(n):
            resid[i] = targets[i] - total[i] + fits[m, i]
            total[i] -= fits[m, i]
        update_tree(gen, X, resid, sigma2, smu2, alpha, beta_d, mix, cuts, ncuts,
                    var[m], cut[m], left[m], right[m], parent[m], depth[m], mu[m],
                    leaf_of[m], fits[m], stats)
        for i in range(n):
            total[i] += fits[m, i]
    return total


@numba.njit(cache=True)
def predict_kernel(var, cut, left, right, mu, X):
    M = var.shape[0]
    out = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        s = 0.0
        for m in range(M):
            node = _route(X, i, var[m], cut[m], left[m], right[m], 0)
            s += mu[m, node]
        out[i] = s
    return out


@numba.njit(cache=True)
def _tree_prior_kernel(alpha, beta_d, X, cuts, ncuts, var, cut, left, right, depth):
    n = X.shape[0]
    leaf_of = np.empty(n, dtype=np.int64)
    for i in range(n):
        leaf_of[i] = _route(X, i, var, cut, left, right, 0)
    total = 0.0
    for k in range(var.size):
        if var[k] == LEAF:
            total += _log_nosplit(alpha, beta_d, depth[k])
        elif var[k] >= 0:
            total += _log_split(alpha, beta_d, depth[k])
            rows = _rows_in(leaf_of, _mark_subtree(var, left, right, k))
            total += _log_rule_prior(X, rows, cuts, ncuts, var[k], cut[k])
    return total


# ---------------------------------------------------------------------------
# Python-facing containers

def _empty_arrays(M, capacity, n):
    var = np.full((M, capacity), FREE, dtype=np.int64)
    var[:, 0] = LEAF
    return dict(
        var=var,
        cut=np.zeros((M, capacity)),
        left=np.full((M, capacity), -1, dtype=np.int64),
        right=np.full((M, capacity), -1, dtype=np.int64),
        parent=np.full((M, capacity), -1, dtype=np.int64),
        depth=np.zeros((M, capacity), dtype=np.int64),
        mu=np.zeros((M, capacity)),
        leaf_of=np.zeros((M, n), dtype=np.int64),
    )


@dataclass
class RegressionTree:
    """A single binary tree in node-array form (root at index 0)."""

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    parent: np.ndarray
    depth: np.ndarray
    mu: np.ndarray

    @classmethod
    def leaf(cls, value: float = 0.0, capacity: int = DEFAULT_CAPACITY) -> "RegressionTree":
        a = _empty_arrays(1, capacity, 0)
        a["mu"][0, 0] = value
        return cls(*(a[k][0] for k in ("var", "cut", "left", "right", "parent", "depth", "mu")))

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float,
              capacity: int = DEFAULT_CAPACITY) -> "RegressionTree":
        t = cls.leaf(0.0, capacity)
        dummy = np.zeros((0, feature + 1))
        apply_move(GROW, 0, feature, threshold, dummy, t.var, t.cut, t.left, t.right,
                   t.parent, t.depth, t.mu, np.zeros(0, dtype=np.int64))
        t.mu[t.left[0]] = left_value
        t.mu[t.right[0]] = right_value
        return t

    def copy(self) -> "RegressionTree":
        return RegressionTree(*(getattr(self, k).copy() for k in
                                ("var", "cut", "left", "right", "parent", "depth", "mu")))

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.var == LEAF))

    @property
    def n_internal(self) -> int:
        return int(np.sum(self.var >= 0))

    def leaves(self):
        return np.flatnonzero(self.var == LEAF)

    def topology(self, node: int = 0):
        """Nested tuples ``(feature, threshold, left, right)``; leaves are ``None``."""
        if self.var[node] == LEAF:
            return None
        return (int(self.var[node]), float(self.cut[node]),
                self.topology(self.left[node]), self.topology(self.right[node]))

    def route(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([_route(X, i, self.var, self.cut, self.left, self.right, 0)
                         for i in range(X.shape[0])], dtype=np.int64)

    def predict(self, X) -> np.ndarray:
        return self.mu[self.route(X)]


class Forest:
    """``M`` trees plus cached per-row fits on a fixed training matrix."""

    def __init__(self, X, M: int, capacity: int = DEFAULT_CAPACITY, rules: SplitRules | None = None):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.rules = rules if rules is not None else SplitRules.from_data(self.X)
        n = self.X.shape[0]
        for k, v in _empty_arrays(M, capacity, n).items():
            setattr(self, k, v)
        self.fits = np.zeros((M, n))
        self.move_stats = np.zeros((2, 3), dtype=np.int64)  # proposed / accepted

    @property
    def M(self) -> int:
        return self.var.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def tree(self, m: int) -> RegressionTree:
        return RegressionTree(self.var[m].copy(), self.cut[m].copy(), self.left[m].copy(),
                              self.right[m].copy(), self.parent[m].copy(),
                              self.depth[m].copy(), self.mu[m].copy())

    def set_tree(self, m: int, tree: RegressionTree):
        for k in ("var", "cut", "left", "right", "parent", "depth", "mu"):
            getattr(self, k)[m] = getattr(tree, k)
        self.leaf_of[m] = tree.route(self.X)
        self.fits[m] = self.mu[m][self.leaf_of[m]]

    def cached_total(self) -> np.ndarray:
        return self.fits.sum(axis=0)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return predict_kernel(self.var, self.cut, self.left, self.right, self.mu, X)

    def check_cache(self, atol: float = 1e-10) -> bool:
        return bool(np.allclose(self.predict(self.X), self.cached_total(), atol=atol, rtol=0))

    def snapshot(self) -> dict:
        return {k: getattr(self, k).copy() for k in ("var", "cut", "left", "right", "mu")}

    def depth_of_trees(self) -> np.ndarray:
        return np.array([self.depth[m][self.var[m] == LEAF].max() for m in range(self.M)])


def predict(forest: Forest, x) -> np.ndarray | float:
    """Sum of routed leaf values; scalar for a single feature vector."""
    out = forest.predict(np.atleast_2d(np.asarray(x, dtype=float)))
    return float(out[0]) if np.ndim(x) == 1 else out


def predict_snapshot(snap: dict, X) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    return predict_kernel(snap["var"], snap["cut"], snap["left"], snap["right"], snap["mu"], X)


def log_tree_prior(hyper: BartHyper, tree: RegressionTree, X, rules: SplitRules | None = None) -> float:
    """Log prior of a tree's structure on training data ``X``.

    Each leaf contributes ``log(1 - p_split(depth))``; each internal node
    ``log p_split(depth) - log(p_adj) - log(r)`` with ``p_adj`` the number of
    features splittable at the node and ``r`` the number of thresholds
    available for its feature.
    """
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    rules = rules if rules is not None else SplitRules.from_data(X)
    return float(_tree_prior_kernel(hyper.alpha, hyper.beta_depth, X, rules.cuts, rules.ncuts,
                                    tree.var, tree.cut, tree.left, tree.right, tree.depth))


def propose(rng: SeededRng, tree: RegressionTree, X, hyper: BartHyper,
            rules: SplitRules | None = None, move: str | None = None):
    """Propose a GROW, PRUNE or CHANGE move on a copy of ``tree``.

    Returns ``(new_tree, move_name, log_proposal_ratio)``; ``new_tree`` is
    None when the drawn move is impossible. The ratio is
    ``log q(new -> old) - log q(old -> new)``.
    """
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    rules = rules if rules is not None else SplitRules.from_data(X)
    forced = -1 if move is None else MOVE_NAMES.index(move)
    leaf_of = tree.route(X)
    mix = np.asarray(hyper.proposal_mix, dtype=float)
    mv, node, v, c, lr, ok = propose_move(rng.generator, mix, X, rules.cuts, rules.ncuts,
                                          tree.var, tree.cut, tree.left, tree.right, leaf_of, forced)
    if not ok:
        return None, MOVE_NAMES[mv], 0.0
    new = tree.copy()
    apply_move(mv, node, v, c, X, new.var, new.cut, new.left, new.right, new.parent,
               new.depth, new.mu, leaf_of)
    return new, MOVE_NAMES[mv], float(lr)


def sweep(rng: SeededRng, forest: Forest, targets, variance: float, hyper: BartHyper) -> Forest:
    """One Bayesian backfitting pass over all trees at fixed outcome variance."""
    targets = np.ascontiguousarray(targets, dtype=float)
    if targets.shape != (forest.X.shape[0],):
        raise ValueError("targets must have one entry per training row")
    if not variance > 0:
        raise ValueError("variance must be positive")
    mix = np.asarray(hyper.proposal_mix, dtype=float)
    sweep_kernel(rng.generator, forest.X, targets, float(variance), float(hyper.sigma_mu) ** 2,
                 hyper.alpha, hyper.beta_depth, mix, forest.rules.cuts, forest.rules.ncuts,
                 forest.var, forest.cut, forest.left, forest.right, forest.parent,
                 forest.depth, forest.mu, forest.leaf_of, forest.fits, forest.move_stats)
    return forest


def sample_variance(rng: SeededRng, residuals, hyper: BartHyper) -> float:
    """Draw sigma^2 from IG((nu + n)/2, (nu*lam + sum r^2)/2)."""
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise ValueError("need at least one residual")
    lam = hyper.lam if hyper.lam is not None else default_lambda(r, hyper.nu)
    shape = 0.5 * (hyper.nu + r.size)
    rate = 0.5 * (hyper.nu * lam + float(r @ r))
    return rate / rng.generator.gamma(shape)
