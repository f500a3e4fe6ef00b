"""Secondary verifier models: a from-scratch random forest and a k-NN alternate.

Both expose the same ranking surface over flattened pixel vectors:
`predict_proba` (class probability vector), `top_k` (the k most probable
classes, descending, ties toward the smaller class index) and `rank_of`
(1-based position of a class in the full tie-broken ordering). The
detection pipeline only relies on that surface, so the two verifiers are
interchangeable.

Forest training uses bagging plus random feature selection: each tree is
grown on a bootstrap resample, and each split considers a fresh random
feature subset, choosing the threshold with the largest Gini impurity
decrease. Thresholds are midpoints between consecutive distinct sorted
feature values; split ties break toward the smaller feature index, then
the smaller threshold. Every tree owns an independent seeded RNG stream,
so fitting is bit-deterministic for a fixed seed regardless of how trees
are scheduled.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset

FOREST_FORMAT = "advaware.forest/v1"


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 100
    max_depth: int = 16
    features_per_split: int | None = None  # default floor(sqrt(feature_dim))
    min_samples_leaf: int = 1
    seed: int = 0
    bootstrap: bool = True  # disable to fit each tree on the exact training set

    def __post_init__(self) -> None:
        if self.tree_count < 1:
            raise ValueError(f"tree_count must be >= 1, got {self.tree_count}")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")


def ranked_classes(probabilities: np.ndarray) -> np.ndarray:
    """All classes ordered by descending probability, ties toward the smaller index."""
    probs = np.asarray(probabilities)
    return np.argsort(-probs, kind="stable")


def ranks_of(probabilities: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """1-based rank of classes[i] within each row of a probability matrix.

    The rank of class c is one plus the number of classes that beat it:
    strictly higher probability, or equal probability at a smaller index.
    """
    probs = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    cls = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    own = probs[np.arange(len(cls)), cls]
    higher = (probs > own[:, None]).sum(axis=1)
    tied_before = ((probs == own[:, None]) & (np.arange(probs.shape[1])[None, :] < cls[:, None])).sum(axis=1)
    return higher + tied_before + 1


class DecisionTree:
    """CART-style classification tree stored as parallel node arrays.

    Internal nodes hold (feature index, threshold); a sample goes left
    when its feature value is <= threshold. Leaves hold class-count
    histograms of the training samples that reached them.
    """

    def __init__(
        self,
        feature: np.ndarray,
        threshold: np.ndarray,
        left: np.ndarray,
        right: np.ndarray,
        histogram: np.ndarray,
    ):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.histogram = np.asarray(histogram, dtype=np.int64)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf node index for each row of x, by vectorized descent."""
        node = np.zeros(len(x), dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = np.nonzero(feat >= 0)[0]
            if active.size == 0:
                return node
            cur = node[active]
            go_left = x[active, feat[active]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        hist = self.histogram[self.apply(x)].astype(np.float64)
        return hist / hist.sum(axis=1, keepdims=True)


class _TreeBuilder:
    def __init__(self, class_count: int):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.histogram: list[np.ndarray] = []
        self.class_count = class_count

    def new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.histogram.append(np.zeros(self.class_count, dtype=np.int64))
        return len(self.feature) - 1

    def finish(self) -> DecisionTree:
        return DecisionTree(
            feature=np.array(self.feature),
            threshold=np.array(self.threshold),
            left=np.array(self.left),
            right=np.array(self.right),
            histogram=np.stack(self.histogram),
        )


def _find_split(
    x: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    feats: np.ndarray,
    class_count: int,
    min_leaf: int,
) -> tuple[int, float] | None:
    """Best (feature, threshold) by Gini impurity decrease, or None.

    Maximizing sum(left_counts^2)/n_left + sum(right_counts^2)/n_right is
    equivalent to minimizing the weighted child Gini impurity; a split is
    accepted only if the impurity strictly decreases.
    """
    n = idx.size
    sub = x[idx[:, None], feats[None, :]]
    spread = sub.max(axis=0) > sub.min(axis=0)
    if not spread.any():
        return None
    feats = feats[spread]
    sub = sub[:, spread]

    order = np.argsort(sub, axis=0, kind="stable")
    svals = np.take_along_axis(sub, order, axis=0)
    slabs = y[idx][order]  # (n, m)

    onehot = slabs[:, :, None] == np.arange(class_count)[None, None, :]
    cum = np.cumsum(onehot, axis=0, dtype=np.float64)  # (n, m, C)
    total = cum[-1]
    left = cum[:-1]
    right = total[None, :, :] - left

    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    score = (
        np.einsum("pmc,pmc->pm", left, left) / n_left
        + np.einsum("pmc,pmc->pm", right, right) / n_right
    )
    valid = (svals[1:] > svals[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    score = np.where(valid, score, -np.inf)

    pos = score.argmax(axis=0)  # first best per feature = smallest threshold
    per_feature = score[pos, np.arange(score.shape[1])]
    j = int(np.argmax(per_feature))  # first best across ascending feature indices
    best = per_feature[j]
    parent = float((total[j] ** 2).sum()) / n
    if not np.isfinite(best) or best <= parent:
        return None
    p = int(pos[j])
    threshold = 0.5 * (svals[p, j] + svals[p + 1, j])
    return int(feats[j]), float(threshold)


def _grow_tree(
    x: np.ndarray,
    y: np.ndarray,
    class_count: int,
    cfg: ForestConfig,
    rng: np.random.Generator,
) -> DecisionTree:
    n, d = x.shape
    m = cfg.features_per_split or max(1, int(np.sqrt(d)))
    if m > d:
        raise ValueError(f"features_per_split={m} exceeds the {d}-dimensional feature space")
    builder = _TreeBuilder(class_count)

    if cfg.bootstrap:
        sample = rng.integers(0, n, size=n)
    else:
        sample = np.arange(n)

    def build(idx: np.ndarray, depth: int) -> int:
        node = builder.new_node()
        counts = np.bincount(y[idx], minlength=class_count)
        split = None
        if depth < cfg.max_depth and idx.size >= 2 * cfg.min_samples_leaf and counts.max() < idx.size:
            feats = np.sort(rng.choice(d, size=m, replace=False))
            split = _find_split(x, y, idx, feats, class_count, cfg.min_samples_leaf)
        if split is None:
            builder.histogram[node] = counts
            return node
        feature, threshold = split
        go_left = x[idx, feature] <= threshold
        builder.feature[node] = feature
        builder.threshold[node] = threshold
        builder.left[node] = build(idx[go_left], depth + 1)
        builder.right[node] = build(idx[~go_left], depth + 1)
        return node

    build(sample, 0)
    return builder.finish()


class RandomForest:
    """Bagged decision trees producing averaged class probabilities."""

    def __init__(self, trees: list[DecisionTree], class_count: int, feature_dim: int, config: ForestConfig):
        if not trees:
            raise ValueError("a forest needs at least one tree")
        self.trees = trees
        self.class_count = class_count
        self.feature_dim = feature_dim
        self.config = config

    def _as_matrix(self, v: np.ndarray) -> tuple[np.ndarray, bool]:
        arr = np.asarray(v, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.feature_dim:
            raise ValueError(f"feature vectors must have length {self.feature_dim}, got {arr.shape}")
        return arr, single

    def predict_proba(self, v: np.ndarray) -> np.ndarray:
        """Mean of the per-tree leaf distributions; rows sum to 1."""
        mat, single = self._as_matrix(v)
        acc = np.zeros((len(mat), self.class_count))
        for tree in self.trees:
            acc += tree.predict_proba(mat)
        acc /= len(self.trees)
        return acc[0] if single else acc

    def predict(self, v: np.ndarray) -> int:
        return int(ranked_classes(self.predict_proba(v))[0])

    def predict_batch(self, mat: np.ndarray) -> np.ndarray:
        probs = self.predict_proba(np.atleast_2d(mat))
        return np.argmax(probs, axis=1)

    def top_k(self, v: np.ndarray, k: int) -> list[int]:
        """The k most probable classes in descending order."""
        if not 1 <= k <= self.class_count:
            raise ValueError(f"k must lie in [1, {self.class_count}], got {k}")
        return [int(c) for c in ranked_classes(self.predict_proba(v))[:k]]

    def rank_of(self, v: np.ndarray, c: int) -> int:
        """1-based position of class c in the full tie-broken ordering."""
        if not 0 <= c < self.class_count:
            raise ValueError(f"class {c} out of range for {self.class_count} classes")
        return int(ranks_of(self.predict_proba(v)[None, :], np.array([c]))[0])

    def rank_batch(self, mat: np.ndarray, classes: np.ndarray) -> np.ndarray:
        return ranks_of(self.predict_proba(np.atleast_2d(mat)), classes)

    # -- serialization -------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": FOREST_FORMAT,
            "class_count": self.class_count,
            "feature_dim": self.feature_dim,
            "config": {
                "tree_count": self.config.tree_count,
                "max_depth": self.config.max_depth,
                "features_per_split": self.config.features_per_split,
                "min_samples_leaf": self.config.min_samples_leaf,
                "seed": self.config.seed,
                "bootstrap": self.config.bootstrap,
            },
            "trees": [
                {
                    "feature": tree.feature.tolist(),
                    "threshold": tree.threshold.tolist(),
                    "left": tree.left.tolist(),
                    "right": tree.right.tolist(),
                    "histogram": tree.histogram.tolist(),
                }
                for tree in self.trees
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RandomForest":
        if doc.get("format") != FOREST_FORMAT:
            raise ValueError(f"unsupported forest document format {doc.get('format')!r}")
        trees = [
            DecisionTree(
                feature=np.array(t["feature"]),
                threshold=np.array(t["threshold"]),
                left=np.array(t["left"]),
                right=np.array(t["right"]),
                histogram=np.array(t["histogram"]),
            )
            for t in doc["trees"]
        ]
        return cls(
            trees=trees,
            class_count=doc["class_count"],
            feature_dim=doc["feature_dim"],
            config=ForestConfig(**doc["config"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RandomForest":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_forest(dataset: Dataset, config: ForestConfig, *, jobs: int = 1) -> RandomForest:
    """Fit a random forest on flattened pixels.

    Trees draw from independent child streams of config.seed, so the
    result is identical whether they are fitted sequentially or by a
    thread pool (`jobs` > 1).
    """
    if len(dataset) == 0:
        raise ValueError("cannot fit a forest on an empty dataset")
    x = dataset.features()
    y = dataset.labels
    d = x.shape[1]
    m = config.features_per_split or max(1, int(np.sqrt(d)))
    if m > d:
        raise ValueError(f"features_per_split={m} exceeds the {d}-dimensional feature space")

    seeds = np.random.SeedSequence(config.seed).spawn(config.tree_count)

    def fit_one(i: int) -> DecisionTree:
        return _grow_tree(x, y, dataset.class_count, config, np.random.default_rng(seeds[i]))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trees = list(pool.map(fit_one, range(config.tree_count)))
    else:
        trees = [fit_one(i) for i in range(config.tree_count)]
    return RandomForest(trees=trees, class_count=dataset.class_count, feature_dim=d, config=config)


class KnnVerifier:
    """Brute-force k-nearest-neighbour verifier over flattened pixels.

    Class scores are the vote fractions among the `neighbors` nearest
    training vectors under Euclidean distance; distance ties resolve
    toward the smaller training index. Exposes the same probability,
    top-k and rank surface as the forest.
    """

    def __init__(self, train: Dataset, neighbors: int):
        if len(train) == 0:
            raise ValueError("cannot build a k-NN verifier from an empty training set")
        if not 1 <= neighbors <= len(train):
            raise ValueError(f"neighbors must lie in [1, {len(train)}], got {neighbors}")
        self.x = train.features()
        self.y = train.labels
        self.class_count = train.class_count
        self.feature_dim = self.x.shape[1]
        self.neighbors = neighbors

    def predict_proba(self, v: np.ndarray) -> np.ndarray:
        arr = np.asarray(v, dtype=np.float64)
        single = arr.ndim == 1
        mat = arr[None, :] if single else arr
        if mat.shape[1] != self.feature_dim:
            raise ValueError(f"feature vectors must have length {self.feature_dim}, got {arr.shape}")
        out = np.empty((len(mat), self.class_count))
        for i, row in enumerate(mat):
            d2 = ((self.x - row) ** 2).sum(axis=1)
            nearest = np.argsort(d2, kind="stable")[: self.neighbors]
            out[i] = np.bincount(self.y[nearest], minlength=self.class_count) / self.neighbors
        return out[0] if single else out

    def predict(self, v: np.ndarray) -> int:
        return int(ranked_classes(self.predict_proba(v))[0])

    def predict_batch(self, mat: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(np.atleast_2d(mat)), axis=1)

    def top_k(self, v: np.ndarray, k: int) -> list[int]:
        if not 1 <= k <= self.class_count:
            raise ValueError(f"k must lie in [1, {self.class_count}], got {k}")
        return [int(c) for c in ranked_classes(self.predict_proba(v))[:k]]

    def rank_of(self, v: np.ndarray, c: int) -> int:
        if not 0 <= c < self.class_count:
            raise ValueError(f"class {c} out of range for {self.class_count} classes")
        return int(ranks_of(self.predict_proba(v)[None, :], np.array([c]))[0])

    def rank_batch(self, mat: np.ndarray, classes: np.ndarray) -> np.ndarray:
        return ranks_of(self.predict_proba(np.atleast_2d(mat)), classes)


def knn_top_k(train: Dataset, v: np.ndarray, neighbors: int, k: int) -> list[int]:
    """One-shot k-NN top-k query against a training set."""
    return KnnVerifier(train, neighbors).top_k(v, k)
