"""Bagged CART ensemble with stratified k-fold cross-validation."""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import accuracy_score, precision_recall_fscore_support
from sklearn.model_selection import StratifiedKFold

from app.core.errors import EmptyData, InvalidParams, TooFewSamples
from app.models import Confusion, FeatureTable
from app.schemas import FoldMetrics, MetricsReport

logger = logging.getLogger(__name__)

N_CLASSES = 2


class Split(NamedTuple):
    feature: int
    threshold: float
    gain: float


def gini(count0, count1, n):
    """Gini impurity from class counts; works elementwise on arrays."""
    p0 = count0 / n
    p1 = count1 / n
    return 1.0 - (p0 * p0 + p1 * p1)


def find_best_split(X: np.ndarray, y: np.ndarray, min_leaf: int = 1) -> Optional[Split]:
    """Best Gini split over all features and midpoint thresholds.

    Ties go to the lowest feature index, then the smallest threshold.
    Zero-gain splits are allowed so patterns like XOR can still be grown.
    """
    n, d = X.shape
    if n < 2 * min_leaf or d == 0:
        return None
    ones = float(np.sum(y))
    parent = gini(n - ones, ones, float(n))

    order = np.argsort(X, axis=0, kind="stable")
    sorted_x = np.take_along_axis(X, order, axis=0)
    sorted_y = y[order].astype(float)

    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    left1 = np.cumsum(sorted_y, axis=0)[:-1]
    right1 = ones - left1
    left0 = n_left - left1
    right0 = n_right - right1
    weighted = (n_left * gini(left0, left1, n_left) + n_right * gini(right0, right1, n_right)) / n
    gains = parent - weighted

    valid = sorted_x[1:] > sorted_x[:-1]
    sizes = np.arange(1, n)[:, None]
    valid &= (sizes >= min_leaf) & (n - sizes >= min_leaf)
    if not valid.any():
        return None
    gains = np.where(valid, gains, -np.inf)

    best = gains.max()
    feature = int(np.flatnonzero((gains == best).any(axis=0))[0])
    row = int(np.flatnonzero(gains[:, feature] == best)[0])
    threshold = (sorted_x[row, feature] + sorted_x[row + 1, feature]) / 2.0
    return Split(feature, float(threshold), float(best))


@dataclass
class TreeNode:
    proba: np.ndarray
    n_samples: int
    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class DecisionTree:
    max_depth: Optional[int] = None
    min_leaf: int = 1
    root: Optional[TreeNode] = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "DecisionTree":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        if X.shape[0] == 0:
            raise EmptyData("cannot fit a tree on zero samples")
        self.root = self._grow(X, y, depth=0)
        return self

    def _grow(self, X: np.ndarray, y: np.ndarray, depth: int) -> TreeNode:
        counts = np.bincount(y, minlength=N_CLASSES)
        node = TreeNode(proba=counts / counts.sum(), n_samples=len(y))
        if (
            np.count_nonzero(counts) <= 1
            or (self.max_depth is not None and depth >= self.max_depth)
            or len(y) < 2 * self.min_leaf
        ):
            return node
        split = find_best_split(X, y, self.min_leaf)
        if split is None:
            return node
        goes_left = X[:, split.feature] <= split.threshold
        node.feature, node.threshold = split.feature, split.threshold
        node.left = self._grow(X[goes_left], y[goes_left], depth + 1)
        node.right = self._grow(X[~goes_left], y[~goes_left], depth + 1)
        return node

    def _leaf(self, x: np.ndarray) -> TreeNode:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self._leaf(x).proba for x in X])

    def predict(self, X: np.ndarray) -> np.ndarray:
        # argmax keeps class 0 on a tie
        return np.argmax(self.predict_proba(X), axis=1)

    def depth(self) -> int:
        def walk(node: TreeNode) -> int:
            return 0 if node.is_leaf else 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)


def fit_tree(data: FeatureTable, max_depth: Optional[int] = None, min_leaf: int = 1) -> DecisionTree:
    if min_leaf < 1:
        raise InvalidParams(f"min_leaf must be >= 1, got {min_leaf}")
    return DecisionTree(max_depth=max_depth, min_leaf=min_leaf).fit(data.X, data.y)


def _fit_on(X, y, index, max_depth, min_leaf) -> DecisionTree:
    return DecisionTree(max_depth=max_depth, min_leaf=min_leaf).fit(X[index], y[index])


@dataclass
class BaggedEnsemble:
    trees: List[DecisionTree]
    seed: int
    bootstrap_indices: np.ndarray = field(repr=False, default=None)

    def votes(self, X: np.ndarray) -> np.ndarray:
        """Number of trees voting class1 for each row."""
        return np.sum([tree.predict(X) for tree in self.trees], axis=0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        # strict majority for class1; an even split goes to class 0
        return (2 * self.votes(X) > len(self.trees)).astype(int)


def fit_ensemble(
    data: FeatureTable,
    n_trees: int = 400,
    seed: int = 0,
    max_depth: Optional[int] = None,
    min_leaf: int = 1,
    n_jobs: int = 1,
) -> BaggedEnsemble:
    """Bootstrap indices are drawn up front, so tree order never depends on scheduling."""
    if n_trees < 1:
        raise InvalidParams(f"need at least one tree, got {n_trees}")
    rng = np.random.default_rng(seed)
    n = data.n_samples
    indices = rng.integers(0, n, size=(n_trees, n))
    trees = Parallel(n_jobs=n_jobs)(
        delayed(_fit_on)(data.X, data.y, index, max_depth, min_leaf) for index in indices
    )
    return BaggedEnsemble(trees=list(trees), seed=seed, bootstrap_indices=indices)


def metrics(confusion: Confusion) -> MetricsReport:
    """Precision/recall/F1/accuracy with class1 as the positive class.

    Undefined ratios (no predicted or no actual positives) are reported as 0
    and flagged.
    """
    if confusion.total <= 0:
        raise InvalidParams("confusion counts are empty")
    tp, fp, fn, tn = confusion.tp, confusion.fp, confusion.fn, confusion.tn
    y_true, y_pred = confusion.label_pairs()
    precision, recall, f1, _ = precision_recall_fscore_support(
        y_true, y_pred, average="binary", pos_label=1, zero_division=0
    )
    return MetricsReport(
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
        accuracy=float(accuracy_score(y_true, y_pred)),
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        precision_undefined=tp + fp == 0,
        recall_undefined=tp + fn == 0,
    )


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per sample from a shuffled StratifiedKFold."""
    y = np.asarray(y, dtype=int)
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    assignment = np.empty(len(y), dtype=int)
    for fold, (_, test) in enumerate(splitter.split(np.zeros((len(y), 1)), y)):
        assignment[test] = fold
    return assignment


def cross_validate(
    data: FeatureTable,
    folds: int = 10,
    n_trees: int = 400,
    seed: int = 42,
    max_depth: Optional[int] = None,
    min_leaf: int = 1,
    per_fold_mean: bool = False,
    n_jobs: int = 1,
) -> MetricsReport:
    if folds < 2:
        raise InvalidParams(f"need at least 2 folds, got {folds}")
    class_counts = np.bincount(data.y, minlength=N_CLASSES)
    if class_counts.min() < folds:
        raise TooFewSamples(
            f"each class needs at least {folds} samples",
            class0=int(class_counts[0]),
            class1=int(class_counts[1]),
            folds=folds,
        )

    fold_seed, *tree_seeds = np.random.SeedSequence(seed).spawn(folds + 1)
    assignment = stratified_folds(data.y, folds, int(fold_seed.generate_state(1)[0]))

    pooled = Confusion()
    per_fold: List[FoldMetrics] = []
    for fold in range(folds):
        test = np.flatnonzero(assignment == fold)
        train = np.flatnonzero(assignment != fold)
        ensemble = fit_ensemble(
            data.subset(train),
            n_trees=n_trees,
            seed=int(tree_seeds[fold].generate_state(1)[0]),
            max_depth=max_depth,
            min_leaf=min_leaf,
            n_jobs=n_jobs,
        )
        confusion = Confusion.from_predictions(data.y[test], ensemble.predict(data.X[test]))
        pooled = pooled + confusion
        fold_report = metrics(confusion)
        per_fold.append(
            FoldMetrics(
                fold=fold,
                precision=fold_report.precision,
                recall=fold_report.recall,
                f1=fold_report.f1,
                accuracy=fold_report.accuracy,
                n_test=len(test),
            )
        )
        logger.debug("fold %d: accuracy %.3f", fold, fold_report.accuracy)

    report = metrics(pooled)
    update = {
        "folds": per_fold,
        "seed": seed,
        "n_trees": n_trees,
        "network": data.network.value if data.network else None,
        "feature_kind": data.provenance.value,
    }
    if per_fold_mean:
        update.update(
            precision=float(np.mean([f.precision for f in per_fold])),
            recall=float(np.mean([f.recall for f in per_fold])),
            f1=float(np.mean([f.f1 for f in per_fold])),
            accuracy=float(np.mean([f.accuracy for f in per_fold])),
            aggregation="per_fold_mean",
        )
    return report.model_copy(update=update)


def fold_partition(y: np.ndarray, folds: int, seed: int) -> Tuple[np.ndarray, ...]:
    """Test index sets of the folds `cross_validate` uses for this seed."""
    fold_seed = np.random.SeedSequence(seed).spawn(folds + 1)[0]
    assignment = stratified_folds(y, folds, int(fold_seed.generate_state(1)[0]))
    return tuple(np.flatnonzero(assignment == fold) for fold in range(folds))
