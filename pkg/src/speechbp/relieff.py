"""ReliefF feature weighting and cross-validated selection.

Exhaustive variant: every instance serves as a query in index order, so there
is no sampling randomness anywhere in the weights.  Distances are Manhattan
on range-normalized features; neighbor ties go to the lower index so results
are reproducible across implementations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_K = 10
DEFAULT_K_GRID = (3, 5, 10)
DEFAULT_FOLDS = 10


class ClassTooSmall(ValueError):
    pass


class EmptyFeatureSet(ValueError):
    pass


class AllFeaturesDropped(ValueError):
    pass


@dataclass(frozen=True)
class FeatureWeights:
    names: tuple
    weights: np.ndarray
    k_neighbors: int
    n_iterations: int


@dataclass(frozen=True)
class SelectionResult:
    chosen_k: int
    kept: tuple
    fold_accuracies: tuple
    weights: FeatureWeights


def _normalized_diffs(X: np.ndarray) -> np.ndarray:
    """Pairwise per-feature diffs |x_a - x_b| / range; zero-range columns
    contribute 0."""
    ranges = X.max(axis=0) - X.min(axis=0)
    safe = np.where(ranges == 0.0, 1.0, ranges)
    diffs = np.abs(X[:, None, :] - X[None, :, :]) / safe
    diffs[:, :, ranges == 0.0] = 0.0
    return diffs


def relieff_weights(X, y, k: int = DEFAULT_K, m: int | None = None,
                    names: Sequence[str] | None = None) -> FeatureWeights:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-d with one label per row")
    n, d = X.shape
    if d == 0:
        raise EmptyFeatureSet("no feature columns")
    labels, counts = np.unique(y, return_counts=True)
    if len(labels) < 2 or np.min(counts) < 2:
        raise ClassTooSmall("need at least 2 examples in each of 2 classes")
    if k < 1 or k > np.min(counts) - 1:
        raise ClassTooSmall(
            f"k={k} exceeds smallest class size {int(np.min(counts))} - 1")
    iterations = n if m is None else min(m, n)
    if iterations < 1:
        raise ValueError("need at least one iteration")

    count_of = {int(c): int(cnt) for c, cnt in zip(labels, counts)}
    diffs = _normalized_diffs(X)
    dist = diffs.sum(axis=2)
    np.fill_diagonal(dist, np.inf)

    hit_acc = np.zeros(d)
    miss_acc = np.zeros(d)
    for r in range(iterations):
        order = np.argsort(dist[r], kind="stable")  # ties -> lower index
        same = y[order] == y[r]
        hits = order[same][:k]
        misses = order[~same][:k]
        hit_acc += diffs[r, hits].sum(axis=0)
        denom = n - count_of[int(y[r])]
        for mi in misses:
            miss_acc += (count_of[int(y[mi])] / denom) * diffs[r, mi]

    weights = (miss_acc - hit_acc) / (iterations * k)
    if names is None:
        names = tuple(f"f{i}" for i in range(d))
    return FeatureWeights(names=tuple(names), weights=weights,
                          k_neighbors=k, n_iterations=iterations)


def select_features(weights: FeatureWeights, policy="drop_nonpositive"):
    """Kept feature names in descending-weight order.

    policy is either the string "drop_nonpositive" or a ("top_k", k) pair.
    """
    order = np.argsort(-weights.weights, kind="stable")
    if policy == "drop_nonpositive":
        kept = [weights.names[i] for i in order if weights.weights[i] > 0.0]
        if not kept:
            raise AllFeaturesDropped("no feature has positive weight")
        return kept
    if (isinstance(policy, tuple) and len(policy) == 2
            and policy[0] == "top_k"):
        top = int(policy[1])
        if top < 1:
            raise ValueError("top_k needs a positive count")
        return [weights.names[i] for i in order[:top]]
    raise ValueError(f"unknown policy {policy!r}")


def _nearest_neighbor_accuracy(X_train, y_train, X_test, y_test) -> float:
    """1-NN accuracy, Manhattan on ranges learned from the training part."""
    ranges = X_train.max(axis=0) - X_train.min(axis=0)
    safe = np.where(ranges == 0.0, 1.0, ranges)
    correct = 0
    for i in range(len(X_test)):
        d = np.abs(X_train - X_test[i]) / safe
        d[:, ranges == 0.0] = 0.0
        nearest = int(np.argmin(d.sum(axis=1)))  # ties -> lower index
        correct += int(y_train[nearest] == y_test[i])
    return correct / len(X_test)


def _fold_assignment(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    fold_of = np.empty(len(y), dtype=np.int64)
    for label in np.unique(y):
        members = np.flatnonzero(y == label)
        rng = np.random.default_rng((seed, int(label)))
        shuffled = members[rng.permutation(len(members))]
        fold_of[shuffled] = np.arange(len(shuffled)) % folds
    return fold_of


def _keep_indices(weights: FeatureWeights):
    try:
        kept = select_features(weights, "drop_nonpositive")
    except AllFeaturesDropped:
        # degenerate fold: keep the single best-ranked feature instead of
        # failing the whole selection
        kept = select_features(weights, ("top_k", 1))
    name_to_col = {name: i for i, name in enumerate(weights.names)}
    return kept, [name_to_col[name] for name in kept]


def cross_validated_selection(X, y, folds: int = DEFAULT_FOLDS,
                              k_grid: Sequence[int] = DEFAULT_K_GRID,
                              seed: int = 0,
                              names: Sequence[str] | None = None
                              ) -> SelectionResult:
    """Pick the neighbor count by stratified k-fold 1-NN accuracy.

    Candidates that cannot run on some fold (class too small for k) are
    skipped; ties in mean accuracy go to the smaller k.  Final weights are
    recomputed on the full data with the winner.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    labels, counts = np.unique(y, return_counts=True)
    if len(labels) < 2 or np.min(counts) < folds:
        raise ClassTooSmall(
            f"every class needs at least {folds} examples for {folds}-fold CV")

    fold_of = _fold_assignment(y, folds, seed)
    per_k: dict = {}
    for k in sorted(set(int(k) for k in k_grid)):
        accs = []
        feasible = True
        for f in range(folds):
            tr = fold_of != f
            te = ~tr
            try:
                w = relieff_weights(X[tr], y[tr], k=k, names=names)
            except ClassTooSmall:
                feasible = False
                break
            _, cols = _keep_indices(w)
            accs.append(_nearest_neighbor_accuracy(
                X[tr][:, cols], y[tr], X[te][:, cols], y[te]))
        if feasible:
            per_k[k] = accs
    if not per_k:
        raise ClassTooSmall("no candidate k fits the smallest class")

    chosen = min(per_k, key=lambda k: (-float(np.mean(per_k[k])), k))
    final = relieff_weights(X, y, k=chosen, names=names)
    kept, _ = _keep_indices(final)
    return SelectionResult(chosen_k=chosen, kept=tuple(kept),
                           fold_accuracies=tuple(per_k[chosen]),
                           weights=final)


def write_weights_report(path, weights: FeatureWeights,
                         kept: Sequence[str]) -> None:
    kept_set = set(kept)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("feature", "weight", "kept"))
        for name, w in zip(weights.names, weights.weights):
            writer.writerow((name, f"{w:.17g}", int(name in kept_set)))


def write_selection_manifest(path, result: SelectionResult, folds: int,
                             seed: int) -> None:
    payload = {
        "chosen_k": result.chosen_k,
        "folds": folds,
        "seed": seed,
        "fold_accuracies": [float(a) for a in result.fold_accuracies],
        "kept": list(result.kept),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
