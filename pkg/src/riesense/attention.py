"""Hyperbolic attention: cosine similarity -> hyperbolic distance -> softmax.

Scores are computed as

    C       = q.k / (|q| |k|)
    H_input = 1 + c (1 - C)
    H       = arcosh(max(H_input, 1))
    W       = softmax(-H)

The sign inside ``H_input`` is flipped relative to the ``1 + c (C - 1)`` form,
which is never above 1 for ``C`` in [-1, 1] and so collapses every distance to
zero.  That form is kept as the ``"literal"`` variant so the collapse can be
demonstrated.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import gyro
from .errors import ContractError
from .geometry import MIN_NORM

VARIANTS = ("full", "literal", "euclidean")


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int
    head_count: int = 4

    def __post_init__(self):
        if self.model_dim < 1 or self.head_count < 1:
            raise ContractError("model_dim and head_count must be >= 1")
        if self.model_dim % self.head_count:
            raise ContractError(
                f"model_dim {self.model_dim} not divisible by head_count {self.head_count}"
            )

    @property
    def per_head_dim(self):
        return self.model_dim // self.head_count


@dataclass
class ScoreMatrix:
    """Pairwise attention quantities for one head of one sequence."""

    cosine: np.ndarray
    h_input: np.ndarray
    distance: np.ndarray
    weights: np.ndarray


def cosine_similarity(q, k):
    """Cosine of the angle between ``q`` and ``k``; 0 if either is zero."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    nq = np.linalg.norm(q, axis=-1)
    nk = np.linalg.norm(k, axis=-1)
    denom = nq * nk
    raw = np.sum(q * k, axis=-1) / np.where(denom > 0, denom, 1.0)
    return np.clip(np.where(denom > 0, raw, 0.0), -1.0, 1.0)


def cosine_matrix(queries, keys):
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    return cosine_similarity(queries[..., :, None, :], keys[..., None, :, :])


def similarity_to_distance(cos, c, literal=False, return_input=False):
    """Map cosine similarity to a hyperbolic distance.

    With ``literal=True`` the argument is ``1 + c (C - 1)``, which the clamp
    always pins to 1.
    """
    cos = np.asarray(cos, dtype=np.float64)
    if np.any(np.abs(cos) > 1.0 + 1e-9):
        raise ContractError("cosine similarity outside [-1, 1]")
    cos = np.clip(cos, -1.0, 1.0)
    h_input = 1.0 + c * (cos - 1.0) if literal else 1.0 + c * (1.0 - cos)
    distance = np.arccosh(np.maximum(h_input, 1.0))
    return (distance, h_input) if return_input else distance


def attention_weights(distance):
    """Row-wise ``softmax(-H)``."""
    neg = -np.asarray(distance, dtype=np.float64)
    neg = neg - neg.max(axis=-1, keepdims=True)
    e = np.exp(neg)
    return e / e.sum(axis=-1, keepdims=True)


def score_matrix(queries, keys, c, literal=False):
    cos = cosine_matrix(queries, keys)
    distance, h_input = similarity_to_distance(cos, c, literal=literal, return_input=True)
    return ScoreMatrix(cos, h_input, distance, attention_weights(distance))


def _split_heads(x, heads):
    b, length, dim = x.shape
    return x.reshape(b, length, heads, dim // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, heads, length, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, length, heads * dh)


def head_scores(q, k, c, literal=False):
    """Cosine, arcosh argument, distance and weights for ``(..., L, dh)`` Vars."""
    kt = k.transpose(0, 1, 3, 2)
    qn = q / ad.maximum(ad.norm(q), MIN_NORM)
    kn = kt / ad.maximum(ad.norm(kt, axis=-2), MIN_NORM)
    cos = ad.clip(qn @ kn, -1.0, 1.0)
    if literal:
        h_input = 1.0 + c * (cos - 1.0)
    else:
        h_input = 1.0 + c * (1.0 - cos)
    distance = ad.clamp_arcosh(h_input)
    return cos, h_input, distance, ad.softmax(-distance, axis=-1)


def attention_block(x, weights, c, heads, variant="full", record=None):
    """One attention sublayer with residual, on a ``(batch, length, dim)`` Var.

    ``weights`` maps ``wq``, ``wk``, ``wv``, ``wo`` to ``(dim, dim)`` Vars.
    For the hyperbolic variants ``x`` holds ball points and the result is
    ``x (+) exp0(sum_j W_ij v_j)``; the ``"euclidean"`` variant is ordinary
    scaled dot-product attention with an additive residual and ignores ``c``.
    If ``record`` is a list, the per-head score matrices are appended to it.
    """
    if variant not in VARIANTS:
        raise ContractError(f"unknown attention variant {variant!r}")
    if variant == "euclidean":
        u = x
    else:
        u = gyro.logmap0(x, c)
    q = _split_heads(u @ weights["wq"], heads)
    k = _split_heads(u @ weights["wk"], heads)
    # log0(mobius_matvec(Wv, x)) == log0(x) @ Wv, so values are formed in the tangent space
    v = _split_heads(u @ weights["wv"], heads)

    if variant == "euclidean":
        dh = q.shape[-1]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        w = ad.softmax(scores, axis=-1)
        if record is not None:
            record.append({"scores": scores.value, "weights": w.value})
        out = _merge_heads(w @ v) @ weights["wo"]
        return x + out

    cos, h_input, distance, w = head_scores(q, k, c, literal=variant == "literal")
    if record is not None:
        record.append(
            {
                "cosine": cos.value,
                "h_input": h_input.value,
                "distance": distance.value,
                "weights": w.value,
            }
        )
    out = gyro.expmap0(_merge_heads(w @ v) @ weights["wo"], c)
    return gyro.mobius_add(x, out, c)


def attention_forward(x_seq, weights, c, config, variant="full"):
    """Evaluate one attention sublayer on a single ``(L, dim)`` sequence.

    ``weights`` holds numpy arrays.  Returns the output points and the list of
    per-head :class:`ScoreMatrix` objects.
    """
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 2 or x_seq.shape[0] == 0 or x_seq.shape[1] != config.model_dim:
        raise ContractError(f"expected a nonempty (L, {config.model_dim}) sequence, got {x_seq.shape}")
    tape = ad.Tape()
    w = {name: tape.const(value) for name, value in weights.items()}
    record = []
    out = attention_block(tape.const(x_seq[None]), w, tape.const(c), config.head_count, variant, record)
    scores = []
    if variant != "euclidean":
        rec = record[0]
        for h in range(config.head_count):
            scores.append(
                ScoreMatrix(
                    rec["cosine"][0, h], rec["h_input"][0, h], rec["distance"][0, h], rec["weights"][0, h]
                )
            )
    return out.value[0], scores
