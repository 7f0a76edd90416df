"""Identity-only similarity and the identification / verification protocols.

Only the direction of an embedding takes part in any score here; norms are
discarded up front.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import auc as trapezoid_auc
from sklearn.metrics import roc_curve
from sklearn.model_selection import KFold

from .errors import DegenerateInputError, ProtocolError, ShapeError
from .numerics import DEFAULT_EPS, Matrix, as_matrix, row_norms
from .schemas import EvalReport, RocCurve

logger = logging.getLogger(__name__)

DISTRACTOR_IDENTITY = -1

ScoredPair = Tuple[float, bool]


@dataclass(frozen=True)
class EmbeddingSet:
    embeddings: Matrix
    identities: np.ndarray
    ages: Optional[np.ndarray] = None

    def __post_init__(self):
        emb = as_matrix(self.embeddings, "embeddings")
        ids = np.asarray(self.identities, dtype=np.int64)
        if ids.shape != (emb.shape[0],):
            raise ShapeError.mismatch("embedding identities", ids.shape, (emb.shape[0],))
        if self.ages is not None and np.shape(self.ages) != (emb.shape[0],):
            raise ShapeError.mismatch("embedding ages", np.shape(self.ages), (emb.shape[0],))
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "identities", ids)

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    def subset(self, indices: Sequence[int]) -> "EmbeddingSet":
        idx = np.asarray(indices, dtype=np.int64)
        ages = None if self.ages is None else np.asarray(self.ages)[idx]
        return EmbeddingSet(self.embeddings[idx], self.identities[idx], ages)


def _directions(m: Matrix, what: str) -> Matrix:
    norms = row_norms(m)
    zero = np.flatnonzero(norms <= DEFAULT_EPS)
    if zero.size:
        raise DegenerateInputError(f"{what} row {int(zero[0])} is a zero vector")
    return m / norms[:, None]


def identity_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between a and b: the dot product of their unit directions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError.mismatch("identity_similarity", a.shape, b.shape)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= DEFAULT_EPS or nb <= DEFAULT_EPS:
        raise DegenerateInputError("identity similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def _limit_subjects(gallery: EmbeddingSet, probe: EmbeddingSet,
                    subjects: Optional[int]) -> Tuple[EmbeddingSet, EmbeddingSet]:
    """Keeps the first ``subjects`` probe identities (in order of appearance)."""
    if subjects is None:
        return gallery, probe
    if subjects < 1:
        raise ProtocolError("subjects must be >= 1")
    keep: List[int] = []
    for identity in probe.identities:
        if identity not in keep:
            keep.append(int(identity))
        if len(keep) == subjects:
            break
    probe_idx = np.flatnonzero(np.isin(probe.identities, keep))
    gallery_idx = np.flatnonzero(np.isin(gallery.identities, keep))
    return gallery.subset(gallery_idx), probe.subset(probe_idx)


def _select_rank1(gallery_emb: Matrix, probe_emb: Matrix) -> np.ndarray:
    """Index of the most similar gallery row per probe; ties go to the lowest index."""
    scores = _directions(probe_emb, "probe") @ _directions(gallery_emb, "gallery").T
    return np.argmax(scores, axis=1)


def rank1_identification(gallery: EmbeddingSet, probe: EmbeddingSet,
                         subjects: Optional[int] = None) -> EvalReport:
    gallery, probe = _limit_subjects(gallery, probe, subjects)
    if len(gallery) == 0:
        raise ProtocolError("rank-1 identification needs a nonempty gallery")
    if len(probe) == 0:
        raise ProtocolError("rank-1 identification needs at least one probe")
    selected = _select_rank1(gallery.embeddings, probe.embeddings)
    hits = gallery.identities[selected] == probe.identities
    return EvalReport(
        protocol="rank1",
        metrics={"rank1": float(np.mean(hits))},
        counts={"gallery": len(gallery), "probe": len(probe), "hits": int(hits.sum())},
        config={"subjects": subjects},
    )


def distractor_rank1(gallery: EmbeddingSet, distractors: Matrix, probe: EmbeddingSet,
                     subjects: Optional[int] = None) -> EvalReport:
    """Rank-1 over gallery plus unlabeled distractors; picking a distractor is a miss."""
    gallery, probe = _limit_subjects(gallery, probe, subjects)
    if len(gallery) == 0:
        raise ProtocolError("distractor rank-1 needs a nonempty gallery")
    if len(probe) == 0:
        raise ProtocolError("distractor rank-1 needs at least one probe")
    distractors = as_matrix(distractors, "distractors")
    if distractors.shape[1] != gallery.embeddings.shape[1]:
        raise ShapeError.mismatch("distractors vs gallery", distractors.shape, gallery.embeddings.shape)
    pool = np.vstack([gallery.embeddings, distractors])
    pool_ids = np.concatenate([gallery.identities,
                               np.full(distractors.shape[0], DISTRACTOR_IDENTITY, dtype=np.int64)])
    selected = _select_rank1(pool, probe.embeddings)
    hits = (pool_ids[selected] == probe.identities) & (pool_ids[selected] != DISTRACTOR_IDENTITY)
    return EvalReport(
        protocol="distractor_rank1",
        metrics={"rank1": float(np.mean(hits))},
        counts={"gallery": len(gallery), "distractors": int(distractors.shape[0]),
                "probe": len(probe), "hits": int(hits.sum()),
                "distractor_selections": int(np.sum(pool_ids[selected] == DISTRACTOR_IDENTITY))},
        config={"subjects": subjects},
    )


def leave_one_out_rank1(embeddings: EmbeddingSet) -> EvalReport:
    """Every sample probes all the other samples; singleton identities are not probes."""
    directions = _directions(embeddings.embeddings, "embedding")
    scores = directions @ directions.T
    np.fill_diagonal(scores, -np.inf)
    ids = embeddings.identities
    _, inverse, counts = np.unique(ids, return_inverse=True, return_counts=True)
    probes = np.flatnonzero(counts[inverse] > 1)
    if probes.size == 0:
        raise ProtocolError("leave-one-out rank-1 needs an identity with at least two samples")
    selected = np.argmax(scores[probes], axis=1)
    hits = ids[selected] == ids[probes]
    return EvalReport(
        protocol="loo_rank1",
        metrics={"rank1": float(np.mean(hits))},
        counts={"samples": len(embeddings), "probe": int(probes.size), "hits": int(hits.sum())},
    )


# --- Verification ---

def _split_scores(scores: Sequence[ScoredPair]) -> Tuple[np.ndarray, np.ndarray]:
    values = np.array([float(s) for s, _ in scores], dtype=np.float64)
    labels = np.array([bool(l) for _, l in scores], dtype=bool)
    if values.size and not np.all(np.isfinite(values)):
        raise ProtocolError("scores must be finite")
    return values, labels


def _require_both_classes(labels: np.ndarray) -> None:
    if labels.size == 0 or labels.all() or not labels.any():
        raise ProtocolError("verification needs at least one positive and one negative pair")


def roc_auc(scores: Sequence[ScoredPair]) -> RocCurve:
    """Descending threshold sweep with tied scores grouped; AUC by the trapezoid rule."""
    values, labels = _split_scores(scores)
    _require_both_classes(labels)
    fpr, tpr, _ = roc_curve(labels, values, drop_intermediate=False)
    points = [(float(f), float(t)) for f, t in zip(fpr, tpr)]
    return RocCurve(points=points, auc=float(trapezoid_auc(fpr, tpr)))


def _accuracy_at(values: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    return float(np.mean((values >= threshold) == labels))


def best_threshold(values: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """Accuracy-maximizing threshold (score >= t means same); ties go to the smallest t."""
    candidates = np.append(np.unique(values), np.inf)
    predictions = values[None, :] >= candidates[:, None]
    accuracies = np.mean(predictions == labels[None, :], axis=1)
    best = int(np.argmax(accuracies))
    return float(candidates[best]), float(accuracies[best])


def kfold_accuracy(scores: Sequence[ScoredPair], folds: int = 10) -> EvalReport:
    """Per fold, apply the threshold chosen on the other folds; folds are contiguous."""
    if folds < 2:
        raise ProtocolError("kfold accuracy needs folds >= 2")
    values, labels = _split_scores(scores)
    _require_both_classes(labels)
    if values.size < folds:
        raise ProtocolError(f"{values.size} pairs cannot fill {folds} nonempty folds")
    per_fold = []
    for fold, (train_idx, test_idx) in enumerate(KFold(n_splits=folds, shuffle=False).split(values)):
        threshold, train_acc = best_threshold(values[train_idx], labels[train_idx])
        test_acc = _accuracy_at(values[test_idx], labels[test_idx], threshold)
        per_fold.append({"fold": float(fold), "threshold": threshold,
                         "train_accuracy": train_acc, "accuracy": test_acc})
    accuracies = np.array([f["accuracy"] for f in per_fold])
    return EvalReport(
        protocol="kfold",
        metrics={"accuracy": float(accuracies.mean()), "accuracy_std": float(accuracies.std())},
        counts={"pairs": int(values.size), "positive": int(labels.sum()),
                "negative": int((~labels).sum()), "folds": folds},
        config={"folds": folds},
        per_fold=per_fold,
    )


def pair_scores(embeddings: Matrix, pairs: Sequence[Tuple[int, int, bool]]) -> List[ScoredPair]:
    """Identity similarity of every (index_a, index_b, same) pair."""
    directions = _directions(np.asarray(embeddings, dtype=np.float64), "embedding")
    out: List[ScoredPair] = []
    for a, b, same in pairs:
        if not (0 <= a < directions.shape[0] and 0 <= b < directions.shape[0]):
            raise ProtocolError(f"pair ({a}, {b}) refers past the {directions.shape[0]} embeddings")
        out.append((float(np.clip(directions[a] @ directions[b], -1.0, 1.0)), bool(same)))
    return out
