"""Prompt-embedding similarity: how close candidate prompts sit to references.

Used to quantify how much in-context refinement moves free-form user text
toward the standardized training-prompt format, measured as cosine
similarity in a pluggable text-encoder's embedding space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .endpoints import DEFAULT_ATTEMPTS, call_with_retry
from .errors import TransportError, ValidationError


def cosine_similarity(a, b) -> float:
    """dot(a,b)/(|a||b|), clamped to [-1, 1] against rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class SimilarityReport:
    condition: str
    pairs: tuple  # ({candidate, reference, similarity | None}, ...)
    mean: float
    n: int
    n_failed: int

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "pairs": list(self.pairs),
            "mean_similarity": self.mean,
            "n": self.n,
            "n_failed": self.n_failed,
        }


def similarity_report(pairs, endpoint, condition: str, *,
                      attempts: int = DEFAULT_ATTEMPTS, sleep=None) -> SimilarityReport:
    """Embed each side of every (candidate, reference) pair and average cosine.

    Pairs whose embedding fails are reported with a null similarity and
    excluded from the mean rather than zero-filled.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("need at least one text pair")
    kwargs = {} if sleep is None else {"sleep": sleep}

    vectors: dict[str, np.ndarray | None] = {}

    def embed(text: str):
        if text not in vectors:
            try:
                vectors[text] = call_with_retry(lambda: endpoint.embed(text), attempts=attempts, **kwargs)
            except TransportError:
                vectors[text] = None
        return vectors[text]

    rows = []
    sims = []
    for candidate, reference in pairs:
        va, vb = embed(candidate), embed(reference)
        if va is None or vb is None:
            rows.append({"candidate": candidate, "reference": reference, "similarity": None})
            continue
        sim = cosine_similarity(va, vb)
        sims.append(sim)
        rows.append({"candidate": candidate, "reference": reference, "similarity": sim})
    if not sims:
        raise TransportError(f"all {len(pairs)} pairs failed to embed on {endpoint.name}")
    return SimilarityReport(
        condition=condition,
        pairs=tuple(rows),
        mean=float(np.mean(sims)),
        n=len(sims),
        n_failed=len(pairs) - len(sims),
    )


def comparison_report(reports, endpoint_name: str, pooling_note: str = "endpoint-defined") -> dict:
    """Several condition rows plus the pairwise difference when there are two."""
    rows = [r.to_json() for r in reports]
    out = {
        "endpoint": endpoint_name,
        "embedding_pooling": pooling_note,
        "rows": rows,
    }
    if len(reports) == 2:
        out["mean_difference"] = reports[1].mean - reports[0].mean
    return out
