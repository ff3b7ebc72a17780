"""Frozen-embedding evaluation: KNN probe, metrics, retrieval, few-shot,
cross-validation, and improvement reporting.

The probe is a k=3 nearest-neighbor vote (classification) or average
(regression) under Euclidean distance; on unit-normalized embeddings the
Euclidean and cosine rankings coincide. Classification probabilities are
unweighted vote fractions, so at k=3 they take values in {0, 1/3, 2/3, 1};
AUC over such coarse scores uses the tie-aware rank form. Neighbor ties at
the k-th distance break toward the lower training index, and predicted-class
ties break toward the lower class index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng
from .seqio import EmbeddingSet

KNN_K = 3
CV_FOLDS = 4
CV_SEED = 42
RECALL_KS = (1, 10, 30)
FEW_SHOT_NS = (50, 100, 500, 1000)

_METRIC_FOR_KIND = {
    "binary": {"auc", "macro_f1"},
    "multiclass": {"macro_f1", "auc"},
    "regression": {"spearman"},
    "retrieval": {"recall_at_k"},
}


class EvalError(Exception):
    pass


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, EmbeddingSet):
        return x.matrix.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _neighbor_order(train: np.ndarray, queries: np.ndarray, metric: str) -> np.ndarray:
    """Train indices sorted nearest-first per query; ties by lower index."""
    if metric == "euclidean":
        d2 = ((queries[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
        keys = d2
    elif metric == "cosine":
        tn = np.linalg.norm(train, axis=1)
        qn = np.linalg.norm(queries, axis=1)
        if (tn == 0).any() or (qn == 0).any():
            raise EvalError("zero vector under the cosine metric")
        sims = (queries / qn[:, None]) @ (train / tn[:, None]).T
        keys = -sims
    else:
        raise EvalError(f"unknown metric {metric!r}")
    return np.argsort(keys, axis=1, kind="stable")


def knn_neighbors(
    train, queries, k: int = KNN_K, metric: str = "euclidean"
) -> np.ndarray:
    train = _as_matrix(train)
    queries = _as_matrix(queries)
    if train.shape[1] != queries.shape[1]:
        raise EvalError(
            f"dimension mismatch: train {train.shape[1]}, queries {queries.shape[1]}"
        )
    if train.shape[0] < k:
        raise EvalError(f"need at least k={k} training points, have {train.shape[0]}")
    return _neighbor_order(train, queries, metric)[:, :k]


def knn_predict(
    train,
    train_labels,
    queries,
    k: int = KNN_K,
    metric: str = "euclidean",
    regression: bool = False,
):
    """KNN probe predictions.

    Classification returns (classes, probabilities, predicted_labels) where
    probabilities are vote fractions over the k neighbors; regression
    returns the unweighted neighbor mean per query.
    """
    idx = knn_neighbors(train, queries, k=k, metric=metric)
    if regression:
        values = np.asarray(train_labels, dtype=np.float64)
        return values[idx].mean(axis=1)
    labels = np.asarray(train_labels)
    classes = np.unique(labels)
    votes = labels[idx]  # nq x k
    probs = np.zeros((idx.shape[0], classes.shape[0]))
    for ci, c in enumerate(classes):
        probs[:, ci] = (votes == c).mean(axis=1)
    pred = classes[np.argmax(probs, axis=1)]  # argmax takes lowest index on ties
    return classes, probs, pred


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; ties get the mean of their rank span."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Tie-aware AUC: P(score_pos > score_neg) + 0.5 P(equal)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == np.max(labels)
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0 or len(np.unique(labels)) != 2:
        raise EvalError("AUC needs exactly two classes, both present")
    ranks = _average_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_f1(pred_labels, true_labels) -> float:
    """Unweighted mean F1 over the classes present in the true labels."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if len(true) == 0:
        raise EvalError("empty label set")
    f1s = []
    for c in np.unique(true):
        tp = int(((pred == c) & (true == c)).sum())
        fp = int(((pred == c) & (true != c)).sum())
        fn = int(((pred != c) & (true == c)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise EvalError("need two aligned sequences of length >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise EvalError("constant input")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx * ry).sum() / math.sqrt((rx**2).sum() * (ry**2).sum()))


@dataclass(frozen=True)
class EvalTask:
    name: str
    kind: str  # binary | multiclass | regression | retrieval
    metric: str  # auc | macro_f1 | spearman | recall_at_k
    labels: dict[str, object] = field(default_factory=dict)  # id -> label
    train_ids: tuple[str, ...] | None = None
    test_ids: tuple[str, ...] | None = None
    cv_folds: int = CV_FOLDS
    recall_k: int = 1

    def __post_init__(self):
        if self.kind not in _METRIC_FOR_KIND:
            raise EvalError(f"unknown task kind {self.kind!r}")
        if self.metric not in _METRIC_FOR_KIND[self.kind]:
            raise EvalError(
                f"metric {self.metric!r} incompatible with kind {self.kind!r}"
            )


def _metric_from_probe(
    task: EvalTask,
    train_X: np.ndarray,
    train_y: np.ndarray,
    test_X: np.ndarray,
    test_y: np.ndarray,
    k: int = KNN_K,
) -> float:
    if task.kind == "regression":
        pred = knn_predict(train_X, train_y, test_X, k=k, regression=True)
        return spearman(pred, test_y.astype(np.float64))
    classes, probs, pred = knn_predict(train_X, train_y, test_X, k=k)
    if task.metric == "macro_f1":
        return macro_f1(pred, test_y)
    if task.kind == "binary":
        present = np.unique(test_y)
        if len(present) != 2:
            raise EvalError("AUC needs both classes in the test labels")
        pos_class = np.max(present)
        col = int(np.nonzero(classes == pos_class)[0][0]) if pos_class in classes else None
        if col is None:
            raise EvalError("positive class absent from training labels")
        return auc(probs[:, col], test_y)
    # multiclass AUC: macro one-vs-rest over classes present in the test labels
    vals = []
    for c in np.unique(test_y):
        if c not in classes:
            continue
        col = int(np.nonzero(classes == c)[0][0])
        binary = (test_y == c).astype(int)
        if len(np.unique(binary)) != 2:
            continue
        vals.append(auc(probs[:, col], binary))
    if not vals:
        raise EvalError("no class had both positives and negatives in the test set")
    return float(np.mean(vals))


def cv_fold_assignment(labels: np.ndarray, folds: int, seed: int = CV_SEED) -> np.ndarray:
    """Approximately stratified folds: round-robin over a label-sorted shuffle."""
    n = len(labels)
    rng = make_rng(seed, "cv-folds")
    perm = rng.permutation(n)
    order = perm[np.argsort(labels[perm].astype(str), kind="stable")]
    out = np.empty(n, dtype=np.int64)
    out[order] = np.arange(n) % folds
    return out


def evaluate_task(embeddings: EmbeddingSet, task: EvalTask, k: int = KNN_K) -> float:
    """Explicit-split or cross-validated KNN-probe metric for one task."""
    index = embeddings.row_index()
    if task.kind == "retrieval":
        ids = [i for i in embeddings.ids if i in task.labels]
        X = embeddings.matrix[np.array([index[i] for i in ids])].astype(np.float64)
        labels = np.array([task.labels[i] for i in ids])
        report = recall_at_k(X, labels, ks=(task.recall_k,))
        return report.recall[task.recall_k]

    def rows(id_list):
        missing = [i for i in id_list if i not in index]
        if missing:
            raise EvalError(f"ids missing from embeddings: {missing[:3]}...")
        X = embeddings.matrix[np.array([index[i] for i in id_list])].astype(np.float64)
        y = np.array([task.labels[i] for i in id_list])
        return X, y

    if task.train_ids is not None and task.test_ids is not None:
        train_X, train_y = rows(task.train_ids)
        test_X, test_y = rows(task.test_ids)
        return _metric_from_probe(task, train_X, train_y, test_X, test_y, k=k)

    ids = [i for i in embeddings.ids if i in task.labels]
    X, y = rows(ids)
    folds = cv_fold_assignment(y, task.cv_folds)
    vals = []
    for f in range(task.cv_folds):
        mask = folds == f
        vals.append(_metric_from_probe(task, X[~mask], y[~mask], X[mask], y[mask], k=k))
    return float(np.mean(vals))


@dataclass
class RecallReport:
    recall: dict[int, float]
    n_queries: int
    n_singletons: int


def recall_at_k(embeddings, labels, ks: tuple[int, ...] = RECALL_KS) -> RecallReport:
    """Cosine retrieval recall: hit if any top-k neighbor shares the label.

    Self-matches are excluded; queries whose label has no other member are
    excluded from the denominator and reported separately.
    """
    X = _as_matrix(embeddings)
    labels = np.asarray(labels)
    n = X.shape[0]
    norms = np.linalg.norm(X, axis=1)
    if (norms == 0).any():
        raise EvalError("zero vector in retrieval embeddings")
    U = X / norms[:, None]
    sims = U @ U.T
    np.fill_diagonal(sims, -np.inf)
    order = np.argsort(-sims, axis=1, kind="stable")

    uniq, counts = np.unique(labels, return_counts=True)
    label_count = dict(zip(uniq.tolist(), counts.tolist()))
    valid = np.array([label_count[lab] > 1 for lab in labels.tolist()])
    n_queries = int(valid.sum())
    out: dict[int, float] = {}
    for k in ks:
        kk = min(k, n - 1)
        top = order[:, :kk]
        hit = (labels[top] == labels[:, None]).any(axis=1)
        out[k] = float(hit[valid].sum() / n_queries) if n_queries else 0.0
    return RecallReport(recall=out, n_queries=n_queries, n_singletons=int(n - valid.sum()))


# -- few-shot and delta reporting ---------------------------------------------


def few_shot_metrics(
    train_X,
    train_y,
    test_X,
    test_y,
    task: EvalTask,
    n_values: tuple[int, ...] = FEW_SHOT_NS,
    seed: int = 42,
    stratified: bool = False,
) -> dict[int, float | None]:
    """Metric per training-subsample size; None marks N/A, absent marks skipped."""
    train_X = _as_matrix(train_X)
    test_X = _as_matrix(test_X)
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    out: dict[int, float | None] = {}
    for n in sorted(n_values):
        if n >= train_X.shape[0]:
            continue  # skipped, not N/A
        idx = subsample_indices(train_y, n, seed=seed, stratified=stratified)
        try:
            out[n] = _metric_from_probe(
                task, train_X[idx], train_y[idx], test_X, test_y
            )
        except EvalError:
            out[n] = None
    return out


def subsample_indices(
    train_y: np.ndarray, n: int, seed: int, stratified: bool = False
) -> np.ndarray:
    """Seeded subsample of training rows, shared across embedding sets."""
    total = len(train_y)
    rng = make_rng(seed, "few-shot", n)
    if not stratified:
        return rng.choice(total, size=n, replace=False)
    classes, inverse = np.unique(train_y, return_inverse=True)
    picks: list[np.ndarray] = []
    per = max(1, n // len(classes))
    for ci in range(len(classes)):
        rows = np.nonzero(inverse == ci)[0]
        take = min(per, len(rows))
        picks.append(rng.choice(rows, size=take, replace=False))
    idx = np.concatenate(picks)
    if len(idx) > n:
        idx = idx[:n]
    return np.sort(idx)


@dataclass
class TaskDelta:
    baseline: float
    trained: float

    @property
    def delta_pct(self) -> float | None:
        if self.baseline == 0:
            return None
        return 100.0 * (self.trained - self.baseline) / self.baseline

    @property
    def improved(self) -> bool:
        return self.trained > self.baseline


@dataclass
class EvalReport:
    tasks: dict[str, TaskDelta]
    seeds: dict[str, int] = field(default_factory=dict)
    config_hash: str = ""

    @property
    def tasks_improved(self) -> int:
        return sum(1 for t in self.tasks.values() if t.improved)

    @property
    def mean_delta_pct(self) -> float:
        deltas = [t.delta_pct for t in self.tasks.values() if t.delta_pct is not None]
        return float(np.mean(deltas)) if deltas else 0.0

    def to_dict(self) -> dict:
        return {
            "tasks": {
                name: {
                    "baseline": t.baseline,
                    "trained": t.trained,
                    "delta_pct": t.delta_pct,
                    "improved": t.improved,
                }
                for name, t in sorted(self.tasks.items())
            },
            "tasks_improved": self.tasks_improved,
            "n_tasks": len(self.tasks),
            "mean_delta_pct": self.mean_delta_pct,
            "seeds": self.seeds,
            "config_hash": self.config_hash,
        }

    def to_text(self) -> str:
        width = max([len(n) for n in self.tasks] + [4])
        lines = [f"{'Task':<{width}}  {'Base':>8}  {'Trained':>8}  {'Delta%':>8}"]
        for name, t in sorted(self.tasks.items()):
            d = f"{t.delta_pct:+.1f}" if t.delta_pct is not None else "n/a"
            lines.append(
                f"{name:<{width}}  {t.baseline:>8.3f}  {t.trained:>8.3f}  {d:>8}"
            )
        lines.append(
            f"{'tasks improved':<{width}}  {self.tasks_improved}/{len(self.tasks)}"
            f"  mean {self.mean_delta_pct:+.1f}%"
        )
        return "\n".join(lines)


def delta_report(
    baseline: dict[str, float], trained: dict[str, float], **kwargs
) -> EvalReport:
    """Per-task improvement report; delta% is 100 (trained - baseline) / baseline."""
    if set(baseline) != set(trained):
        raise EvalError("baseline and trained task sets differ")
    return EvalReport(
        tasks={name: TaskDelta(baseline[name], trained[name]) for name in baseline},
        **kwargs,
    )
