"""Single-tree summaries of per-participant treatment contrasts ("fit the fit").

A greedy least-squares regression tree is grown on posterior-mean psi
values, giving one readable decision rule per stage. Splits follow the
usual rpart controls: a node needs ``min_split`` rows to be split, each child
needs ``min_bucket`` rows, and a split must lower the total SSE by at least
``complexity`` times the root SSE.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CartControl:
    min_split: int = 50
    min_bucket: int = 17
    complexity: float = 0.01
    max_depth: int = 10

    def __post_init__(self):
        if self.min_bucket > self.min_split:
            raise ValueError("min_bucket must not exceed min_split")
        if self.complexity < 0:
            raise ValueError("complexity must be nonnegative")
        if self.min_bucket < 1 or self.max_depth < 0:
            raise ValueError("min_bucket must be positive and max_depth nonnegative")


@dataclass
class Node:
    n: int
    mean: float
    sse: float
    depth: int = 0
    feature: int | None = None
    threshold: float | None = None
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def action(self) -> int:
        return 1 if self.mean > 0 else -1

    def leaves(self):
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()

    def internal(self):
        if self.is_leaf:
            return []
        return [self] + self.left.internal() + self.right.internal()

    def structure(self):
        """Nested ``(feature, threshold, left, right)``; leaves are ``None``."""
        if self.is_leaf:
            return None
        return (self.feature, self.threshold, self.left.structure(), self.right.structure())


@dataclass
class SummaryTree:
    root: Node
    feature_names: tuple
    r2: float
    control: CartControl = field(default_factory=CartControl)

    @property
    def n_leaves(self) -> int:
        return len(self.root.leaves())

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        for i, x in enumerate(X):
            node = self.root
            while not node.is_leaf:
                node = node.left if x[node.feature] <= node.threshold else node.right
            out[i] = node.mean
        return out

    def actions(self, X) -> np.ndarray:
        return np.where(self.predict(X) > 0, 1, -1)


def _best_split(X, y, control: CartControl):
    """(gain, feature, threshold) of the best admissible split, or None."""
    n = y.size
    best = None
    total, total_sq = y.sum(), (y ** 2).sum()
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        cs = np.cumsum(ys)[:-1]
        cq = np.cumsum(ys ** 2)[:-1]
        nl = np.arange(1, n)
        nr = n - nl
        ok = (xs[1:] > xs[:-1]) & (nl >= control.min_bucket) & (nr >= control.min_bucket)
        if not ok.any():
            continue
        sse_l = cq - cs ** 2 / nl
        sse_r = (total_sq - cq) - (total - cs) ** 2 / nr
        parent = total_sq - total ** 2 / n
        gain = np.where(ok, parent - sse_l - sse_r, -np.inf)
        k = int(np.argmax(gain))  # first maximiser = lowest threshold
        g = gain[k]
        if best is None or g > best[0] * (1 + 1e-12) + 1e-300:
            best = (g, j, 0.5 * (xs[k] + xs[k + 1]))
    return best


def fit_summary_tree(features, psi_means, control: CartControl | None = None,
                     feature_names=None) -> SummaryTree:
    """Grow a regression tree on ``psi_means`` (greedy, no pruning pass)."""
    control = control or CartControl()
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(psi_means, dtype=float)
    if X.shape[0] != y.size:
        raise ValueError("features and targets are misaligned")
    if y.size < control.min_split:
        raise ValueError(f"need at least {control.min_split} rows, got {y.size}")
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"x{j + 1}" for j in range(X.shape[1]))
    # an exactly constant node has zero SSE; the centred sum can leave roundoff
    root_sse = 0.0 if np.ptp(y) == 0 else float(np.sum((y - y.mean()) ** 2))
    floor = control.complexity * root_sse

    def grow(idx, depth):
        yy = y[idx]
        sse = 0.0 if np.ptp(yy) == 0 else float(np.sum((yy - yy.mean()) ** 2))
        node = Node(int(idx.size), float(yy.mean()), sse, depth)
        if idx.size < control.min_split or depth >= control.max_depth or node.sse <= 0:
            return node
        best = _best_split(X[idx], yy, control)
        if best is None or best[0] <= 0 or best[0] < floor:
            return node
        _, j, t = best
        node.feature, node.threshold = j, float(t)
        node.left = grow(idx[X[idx, j] <= t], depth + 1)
        node.right = grow(idx[X[idx, j] > t], depth + 1)
        return node

    root = grow(np.arange(y.size), 0)
    sse = sum(leaf.sse for leaf in root.leaves())
    r2 = 0.0 if root_sse == 0 else 1.0 - sse / root_sse
    return SummaryTree(root, names, r2, control)


# ---------------------------------------------------------------------------
# text and DOT output

def render(tree: SummaryTree) -> str:
    """Indented text, one node per line; left child (``<=``) is listed first."""
    lines = []

    def walk(node, indent):
        pad = "  " * indent
        head = f"{pad}node n={node.n} mean={node.mean!r}"
        if node.is_leaf:
            lines.append(f"{head} leaf action={node.action:+d}")
            return
        lines.append(f"{head} split {tree.feature_names[node.feature]} <= {node.threshold!r}")
        walk(node.left, indent + 1)
        walk(node.right, indent + 1)

    walk(tree.root, 0)
    return "\n".join(lines) + "\n"


_LINE = re.compile(r"^( *)node n=(\d+) mean=(\S+) (?:leaf action=([+-]1)|split (\S+) <= (\S+))$")


def parse_render(text: str, feature_names) -> Node:
    """Rebuild the node structure (sizes, means, splits) from :func:`render` output."""
    names = list(feature_names)
    items = []
    for line in text.strip("\n").splitlines():
        m = _LINE.match(line)
        if m is None:
            raise ValueError(f"unrecognised line: {line!r}")
        items.append(m.groups())
    pos = 0

    def build(depth):
        nonlocal pos
        pad, n, mean, _, feat, thr = items[pos]
        if len(pad) != 2 * depth:
            raise ValueError("inconsistent indentation")
        pos += 1
        node = Node(int(n), float(mean), float("nan"), depth)
        if feat is not None:
            node.feature, node.threshold = names.index(feat), float(thr)
            node.left = build(depth + 1)
            node.right = build(depth + 1)
        return node

    root = build(0)
    if pos != len(items):
        raise ValueError("trailing lines after the tree")
    return root


def to_dot(tree: SummaryTree, name: str = "summary") -> str:
    out = [f"digraph {name} {{", "  node [shape=box];"]
    counter = [0]

    def walk(node):
        k = counter[0]
        counter[0] += 1
        if node.is_leaf:
            label = f"n={node.n}\\npsi={node.mean:.3f}\\naction={node.action:+d}"
        else:
            label = f"{tree.feature_names[node.feature]} <= {node.threshold:.4g}\\nn={node.n}"
        out.append(f'  n{k} [label="{label}"];')
        if not node.is_leaf:
            lk = walk(node.left)
            out.append(f'  n{k} -> n{lk} [label="yes"];')
            rk = walk(node.right)
            out.append(f'  n{k} -> n{rk} [label="no"];')
        return k

    walk(tree.root)
    out.append("}")
    return "\n".join(out) + "\n"
