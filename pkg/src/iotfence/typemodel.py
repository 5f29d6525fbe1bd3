"""Per-type binary classifiers over fixed-width fingerprints.

Each device type gets its own random forest trained one-vs-rest: the type's
fingerprints against a sample of exactly ten negatives per positive drawn
from the other types.  A forest votes match when at least half of its trees
do.  Trees are plain CART: Gini impurity, uniform threshold splits on a
random feature subset per node, grown to purity on a bootstrap sample.

Everything is deterministic from one integer seed; retraining on identical
data yields bit-identical model files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (CorruptFile, DimensionMismatch, EmptyRegistry,
                     InsufficientData, VersionMismatch)
from .fingerprint import Fingerprint, FixedFingerprint, to_fixed

MODEL_SCHEMA = "iotfence-typemodel/1"
MATCH_THRESHOLD = 0.5
NEGATIVES_PER_POSITIVE = 10


@dataclass(frozen=True)
class ForestParams:
    """Forest shape; max_features=None means ceil(sqrt(feature count))."""

    n_trees: int = 100
    max_features: int | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be at least 1")


def fixed_matrix(fps: Sequence[FixedFingerprint] | np.ndarray) -> np.ndarray:
    """Stack fixed fingerprints into a float matrix, one row each."""
    if isinstance(fps, np.ndarray):
        arr = np.asarray(fps, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D matrix, got ndim={arr.ndim}")
        return arr
    return np.array([fp.values for fp in fps], dtype=np.float64)


class DecisionTree:
    """One CART tree stored as parallel node arrays.

    feature[i] is -1 for leaves; leaf_class[i] is -1 for internal nodes;
    votes[i] carries the bootstrap sample count that reached a leaf.
    """

    __slots__ = ("feature", "threshold", "left", "right", "leaf_class", "votes",
                 "_lists")

    def __init__(self, feature, threshold, left, right, leaf_class, votes):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.leaf_class = np.asarray(leaf_class, dtype=np.int64)
        self.votes = np.asarray(votes, dtype=np.int64)
        self._lists = None
        n = len(self.feature)
        if not all(len(a) == n for a in (self.threshold, self.left, self.right,
                                         self.leaf_class, self.votes)):
            raise ValueError("tree arrays must have equal length")

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        """Class (0/1) per row, all rows walked down the tree in lockstep."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            active = np.nonzero(self.feature[node] >= 0)[0]
            if active.size == 0:
                return self.leaf_class[node]
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])

    def predict_one(self, values) -> int:
        """Single-row walk in plain Python; beats array dispatch overhead."""
        if self._lists is None:
            self._lists = (self.feature.tolist(), self.threshold.tolist(),
                           self.left.tolist(), self.right.tolist(),
                           self.leaf_class.tolist())
        feat, thr, lft, rgt, leaf = self._lists
        node = 0
        f = feat[0]
        while f >= 0:
            node = lft[node] if values[f] <= thr[node] else rgt[node]
            f = feat[node]
        return leaf[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_class": self.leaf_class.tolist(),
            "votes": self.votes.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DecisionTree":
        return cls(doc["feature"], doc["threshold"], doc["left"],
                   doc["right"], doc["leaf_class"], doc["votes"])


def _grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
               max_features: int) -> DecisionTree:
    """Fit one tree on a bootstrap of (X, y); split search is vectorized."""
    n_rows, n_feats = X.shape
    max_features = min(max_features, n_feats)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaf_class: list[int] = []
    votes: list[int] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_class.append(-1)
        votes.append(0)
        return len(feature) - 1

    bootstrap = rng.integers(0, n_rows, n_rows)
    stack = [(new_node(), bootstrap)]
    while stack:
        node, rows = stack.pop()
        ys = y[rows]
        n = len(rows)
        n_pos = int(ys.sum())
        if n_pos == 0 or n_pos == n:
            leaf_class[node] = 1 if n_pos else 0
            votes[node] = n
            continue

        feats = rng.choice(n_feats, size=max_features, replace=False)
        Xn = X[np.ix_(rows, feats)]
        order = np.argsort(Xn, axis=0, kind="stable")
        Xs = np.take_along_axis(Xn, order, axis=0)
        pos_left = np.cumsum(ys[order], axis=0)[:-1].astype(np.float64)

        cnt_left = np.arange(1, n, dtype=np.float64)[:, None]
        cnt_right = n - cnt_left
        pos_right = n_pos - pos_left
        gini_left = 1.0 - (pos_left / cnt_left) ** 2 \
                        - ((cnt_left - pos_left) / cnt_left) ** 2
        gini_right = 1.0 - (pos_right / cnt_right) ** 2 \
                         - ((cnt_right - pos_right) / cnt_right) ** 2
        weighted = (cnt_left * gini_left + cnt_right * gini_right) / n
        # splits between equal values are impossible
        weighted[Xs[:-1] == Xs[1:]] = np.inf

        flat = int(np.argmin(weighted))  # ties: lowest split position, then
        i, j = divmod(flat, weighted.shape[1])  # first sampled feature
        if not np.isfinite(weighted[i, j]):
            # every sampled feature is constant here; settle for majority
            leaf_class[node] = int(2 * n_pos >= n)
            votes[node] = n
            continue

        feat = int(feats[j])
        thr = float((Xs[i, j] + Xs[i + 1, j]) / 2.0)
        go_left = X[rows, feat] <= thr
        feature[node] = feat
        threshold[node] = thr
        left_id = new_node()
        right_id = new_node()
        left[node] = left_id
        right[node] = right_id
        stack.append((right_id, rows[~go_left]))
        stack.append((left_id, rows[go_left]))

    return DecisionTree(feature, threshold, left, right, leaf_class, votes)


@dataclass
class TypeClassifier:
    """A trained one-vs-rest forest for a single device type."""

    device_type: str
    trees: list[DecisionTree]
    n_features: int
    training_meta: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def score_many(self, X: np.ndarray) -> np.ndarray:
        """Fraction of trees voting match, per row of X."""
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"classifier expects {self.n_features} features, got {X.shape[1]}")
        total = np.zeros(X.shape[0], dtype=np.int64)
        for tree in self.trees:
            total += tree.predict_many(X)
        return total / self.n_trees

    def score_one(self, values: Sequence[float]) -> float:
        """Fraction of trees voting match for one flattened fingerprint."""
        if len(values) != self.n_features:
            raise DimensionMismatch(
                f"classifier expects {self.n_features} features, got {len(values)}")
        return sum(tree.predict_one(values) for tree in self.trees) / self.n_trees


@dataclass(frozen=True)
class TypePrediction:
    device_type: str
    match: bool
    score: float


def _as_values(x) -> Sequence[float]:
    if isinstance(x, FixedFingerprint):
        return x.values
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected one fingerprint, got ndim={arr.ndim}")
    return arr.tolist()


def train_type_classifier(device_type: str,
                          positives: Sequence[FixedFingerprint] | np.ndarray,
                          negative_pool: Sequence[FixedFingerprint] | np.ndarray,
                          params: ForestParams = ForestParams(),
                          seed: int = 0) -> TypeClassifier:
    """Fit the forest for one type: positives vs 10x sampled negatives."""
    pos = fixed_matrix(positives)
    pool = fixed_matrix(negative_pool)
    n_pos = pos.shape[0]
    n_neg = NEGATIVES_PER_POSITIVE * n_pos
    if n_pos < 2:
        raise InsufficientData(f"{device_type!r}: need at least 2 positives, got {n_pos}")
    if pool.shape[0] < n_neg:
        raise InsufficientData(
            f"{device_type!r}: negative pool has {pool.shape[0]} rows, need {n_neg}")
    if pool.shape[1] != pos.shape[1]:
        raise DimensionMismatch(
            f"positives have {pos.shape[1]} features, pool has {pool.shape[1]}")

    max_features = params.max_features or math.ceil(math.sqrt(pos.shape[1]))
    seeds = np.random.SeedSequence(seed).spawn(params.n_trees + 1)
    neg_rows = np.random.default_rng(seeds[0]).choice(
        pool.shape[0], size=n_neg, replace=False)
    X = np.vstack([pos, pool[neg_rows]])
    y = np.concatenate([np.ones(n_pos, dtype=np.int64),
                        np.zeros(n_neg, dtype=np.int64)])

    trees = [_grow_tree(X, y, np.random.default_rng(seeds[i + 1]), max_features)
             for i in range(params.n_trees)]
    meta = {"n_positive": n_pos, "n_negative": n_neg, "seed": seed,
            "n_trees": params.n_trees, "max_features": max_features}
    return TypeClassifier(device_type=device_type, trees=trees,
                          n_features=pos.shape[1], training_meta=meta)


def train_registry(db: Sequence[Fingerprint], params: ForestParams = ForestParams(),
                   seed: int = 0) -> ClassifierRegistry:
    """Train one classifier per label in a fingerprint store.

    Each type's negative pool is every fingerprint of the other types;
    per-type seeds are derived from the root seed in sorted type order.
    """
    labeled = [fp for fp in db if fp.label is not None]
    if not labeled:
        raise InsufficientData("store has no labeled fingerprints")
    types = sorted({fp.label for fp in labeled})
    if len(types) < 2:
        raise InsufficientData("need at least two device types to train")
    type_idx = {t: i for i, t in enumerate(types)}
    X = np.array([to_fixed(fp).values for fp in labeled], dtype=np.float64)
    y = np.array([type_idx[fp.label] for fp in labeled], dtype=np.int64)

    seeds = np.random.SeedSequence(seed).spawn(len(types))
    registry = ClassifierRegistry()
    for i, t in enumerate(types):
        seed_int = int(seeds[i].generate_state(1, np.uint64)[0])
        registry.add(train_type_classifier(t, X[y == i], X[y != i],
                                           params, seed=seed_int))
    return registry


def predict(clf: TypeClassifier, x) -> TypePrediction:
    """Score one fingerprint; ties at the threshold count as a match."""
    score = clf.score_one(_as_values(x))
    return TypePrediction(device_type=clf.device_type,
                          match=score >= MATCH_THRESHOLD, score=score)


class ClassifierRegistry:
    """All per-type classifiers, keyed and iterated by type id."""

    def __init__(self, classifiers: Iterable[TypeClassifier] = ()):
        self._by_type: dict[str, TypeClassifier] = {}
        for clf in classifiers:
            self.add(clf)

    def add(self, clf: TypeClassifier) -> None:
        self._by_type[clf.device_type] = clf

    def get(self, device_type: str) -> TypeClassifier | None:
        return self._by_type.get(device_type)

    def types(self) -> list[str]:
        return sorted(self._by_type)

    def __len__(self) -> int:
        return len(self._by_type)

    def __contains__(self, device_type: str) -> bool:
        return device_type in self._by_type

    def __iter__(self):
        return iter(self._by_type[t] for t in self.types())


def predict_all(registry: ClassifierRegistry, x) -> list[TypePrediction]:
    """Run every classifier on one fingerprint, ordered by type id."""
    if len(registry) == 0:
        raise EmptyRegistry("no classifiers registered")
    values = _as_values(x)
    out = []
    for clf in registry:
        score = clf.score_one(values)
        out.append(TypePrediction(device_type=clf.device_type,
                                  match=score >= MATCH_THRESHOLD, score=score))
    return out


def save_model(registry: ClassifierRegistry, path) -> None:
    """Write every classifier, trees included, as versioned JSON."""
    doc = {
        "schema": MODEL_SCHEMA,
        "classifiers": [
            {
                "device_type": clf.device_type,
                "n_features": clf.n_features,
                "training_meta": clf.training_meta,
                "trees": [tree.to_dict() for tree in clf.trees],
            }
            for clf in registry
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)


def load_model(path) -> ClassifierRegistry:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "schema" not in doc:
        raise CorruptFile("model file has no schema marker")
    if doc["schema"] != MODEL_SCHEMA:
        raise VersionMismatch(f"expected {MODEL_SCHEMA}, found {doc['schema']!r}")
    registry = ClassifierRegistry()
    try:
        for rec in doc["classifiers"]:
            trees = [DecisionTree.from_dict(t) for t in rec["trees"]]
            registry.add(TypeClassifier(
                device_type=rec["device_type"], trees=trees,
                n_features=int(rec["n_features"]),
                training_meta=rec.get("training_meta", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"model record malformed: {exc}") from exc
    return registry
