"""Query-guided instance labels, semantic decoding and panoptic fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, softmax

from .scene import InstanceQuery, Scene, SemanticDecoder, Surfel

VOID = -1
ALPHA_VOID = 0.5


@dataclass(frozen=True)
class AffinityRecord:
    similarity: float
    proximity: float

    @property
    def attention(self) -> float:
        return self.similarity * self.proximity


def query_gaussian_affinity(query: InstanceQuery, surfel: Surfel) -> AffinityRecord:
    f_q = np.asarray(query.feature, dtype=np.float64)
    f_g = np.asarray(surfel.ins_feature, dtype=np.float64)
    if f_q.shape != f_g.shape:
        raise ValueError(f"feature dims differ: {f_q.shape} vs {f_g.shape}")
    sim = float(expit(f_q @ f_g))
    d = np.asarray(surfel.center, dtype=np.float64) - np.asarray(query.center, dtype=np.float64)
    cov = np.asarray(query.covariance, dtype=np.float64)
    # the pdf ratio against the query's own peak leaves only the exponent
    prox = float(np.exp(-0.5 * d @ np.linalg.solve(cov, d)))
    return AffinityRecord(sim, prox)


def attention_matrix(scene: Scene) -> np.ndarray:
    """(N, M) attention scores of every surfel against every query."""
    f_g = scene.ins_features.astype(np.float64)
    f_q = scene.query_features.astype(np.float64)
    sim = expit(f_g @ f_q.T)
    prox = np.empty_like(sim)
    centers = scene.centers.astype(np.float64)
    for j in range(scene.n_queries):
        d = centers - scene.query_centers[j].astype(np.float64)
        prec = np.linalg.inv(scene.query_covariances[j].astype(np.float64))
        prox[:, j] = np.exp(-0.5 * np.einsum("ni,ij,nj->n", d, prec, d))
    return sim * prox


def instance_label_distribution(surfel: Surfel, queries) -> np.ndarray:
    queries = list(queries)
    if not queries:
        raise ValueError("at least one query is required")
    scores = np.array([query_gaussian_affinity(q, surfel).attention for q in queries])
    return softmax(scores)


def instance_labels(scene: Scene) -> np.ndarray:
    """(N, M) per-surfel softmax distributions over queries."""
    if scene.n_queries == 0:
        return np.zeros((scene.n_surfels, 0))
    return softmax(attention_matrix(scene), axis=1)


def decode_semantic(features: np.ndarray, decoder: SemanticDecoder) -> np.ndarray:
    """Affine decode along the last axis: logits = W f + b."""
    w = decoder.weights.astype(np.float64)
    b = decoder.bias.astype(np.float64)
    f = np.asarray(features, dtype=np.float64)
    return np.tensordot(f, w, axes=([-1], [1])) + b


def decode_semantic_pixel(feature, decoder: SemanticDecoder) -> tuple[np.ndarray, int]:
    logits = decode_semantic(np.asarray(feature)[None], decoder)[0]
    return logits, int(np.argmax(logits)) if len(logits) else -1


def fuse_panoptic(semantic_logits, instance_dist, alpha, decoder: SemanticDecoder):
    """Per-pixel (class id, instance id) maps; void pixels get (VOID, 0).

    Instance ids are 1-based query indices and only set for thing classes.
    """
    alpha = np.asarray(alpha)
    h, w = alpha.shape
    cls = np.full((h, w), VOID, dtype=np.int32)
    inst = np.zeros((h, w), dtype=np.int32)
    if decoder.num_classes == 0:
        return cls, inst
    solid = alpha > ALPHA_VOID
    arg = np.argmax(semantic_logits, axis=-1).astype(np.int32)
    cls[solid] = arg[solid]
    if instance_dist is not None and instance_dist.shape[-1] > 0:
        things = np.asarray(decoder.thing_flags, dtype=bool)[arg] & solid
        ins_arg = np.argmax(instance_dist, axis=-1).astype(np.int32) + 1
        inst[things] = ins_arg[things]
    return cls, inst
