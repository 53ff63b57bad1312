"""Latent-ball augmentation: encode windows to a small Poincare ball, sample, decode.

The encoder is a principal-axis projection of the flattened (standardized)
windows followed by the exp map at the origin.  Synthetic samples come from
Gaussian perturbation in the tangent space and from geodesic interpolation
between two samples of the same class, and are decoded back to signal space.

The tangent coordinates share one isotropic scale, chosen so that their RMS
norm over the training set is ``TARGET_RMS``.  Keeping the scale isotropic
preserves the relative geometry of the principal axes, so a fixed ``sigma``
means the same thing along every axis.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import geometry as geo
from .dataset import INTERPOLATED, JITTERED, ORIGINAL, PERTURBED, Dataset
from .errors import ContractError

log = logging.getLogger(__name__)

TARGET_RMS = 0.5
RANK_TOL = 1e-10


@dataclass(frozen=True)
class AugmentConfig:
    latent_dim: int = 10
    c_aug: float = 1.0
    sigma: float = 0.1
    t_range: tuple = (0.2, 0.8)
    count: int | None = None  # synthetic samples per class; None means twice the originals
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 2:
            raise ContractError(f"latent_dim must be at least 2, got {self.latent_dim}")
        if not (np.isfinite(self.c_aug) and self.c_aug > 0):
            raise ContractError(f"c_aug must be positive, got {self.c_aug}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ContractError(f"sigma must be finite and non-negative, got {self.sigma}")
        lo, hi = self.t_range
        if not 0 < lo <= hi < 1:
            raise ContractError(f"t_range must satisfy 0 < lo <= hi < 1, got {self.t_range}")
        if self.count is not None and self.count < 0:
            raise ContractError("count must be non-negative")

    def per_class(self, originals):
        return 2 * originals if self.count is None else self.count


@dataclass(frozen=True)
class LatentPoint:
    point: np.ndarray
    label: int
    provenance: int = ORIGINAL
    anchor: int = -1  # index of the sample whose residual completes the decoded window


@dataclass(frozen=True)
class Encoder:
    """Mean window, orthonormal basis ``(features, k)`` and per-axis scales."""

    mean: np.ndarray
    basis: np.ndarray
    scales: np.ndarray
    shape: tuple

    @property
    def latent_dim(self):
        return self.basis.shape[1]


def fit_encoder(data, latent_dim=10):
    """Principal axes of the flattened windows ``data`` of shape ``(n, channels, T)``."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3:
        raise ContractError(f"expected (samples, channels, timesteps), got shape {data.shape}")
    n = data.shape[0]
    if n < latent_dim + 1:
        raise ContractError(f"need at least {latent_dim + 1} samples to fit a {latent_dim}-dim encoder, got {n}")
    flat = data.reshape(n, -1)
    mean = flat.mean(axis=0)
    _, s, vt = np.linalg.svd(flat - mean, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * max(s[0], 1e-300)))
    k = latent_dim
    if rank < latent_dim:
        log.warning("data has rank %d < latent_dim %d; reducing the latent dimension", rank, latent_dim)
        k = max(rank, 1)
    basis = vt[:k].T
    coords = (flat - mean) @ basis
    rms = np.sqrt(np.mean(np.sum(coords ** 2, axis=1)))
    scale = TARGET_RMS / rms if rms > 0 else 1.0
    return Encoder(mean=mean, basis=basis, scales=np.full(k, scale), shape=data.shape[1:])


def tangent(windows, encoder):
    """Scaled principal coordinates of one window or a batch."""
    windows = np.asarray(windows, dtype=np.float64)
    single = windows.ndim == 2
    if windows.shape[-2:] != tuple(encoder.shape):
        raise ContractError(f"expected windows of shape {tuple(encoder.shape)}, got {windows.shape[-2:]}")
    flat = windows.reshape(-1, encoder.mean.size)
    u = ((flat - encoder.mean) @ encoder.basis) * encoder.scales
    return u[0] if single else u


def encode(window, encoder, c_aug, label=0):
    return LatentPoint(geo.exp_map_origin(tangent(window, encoder), c_aug), int(label))


def residual(windows, encoder):
    """Part of each window orthogonal to the principal subspace."""
    windows = np.asarray(windows, dtype=np.float64)
    flat = windows.reshape(-1, encoder.mean.size) - encoder.mean
    rest = flat - (flat @ encoder.basis) @ encoder.basis.T
    return rest.reshape(windows.shape)


def decode(point, encoder, c_aug, rest=None):
    """Window (or batch) reconstructed from latent ball points.

    Without ``rest`` this is the principal-subspace reconstruction.  Passing
    the ``residual`` of a real window adds back the detail the projection
    dropped, so that ``decode(encode(x), rest=residual(x)) == x``.
    """
    p = point.point if isinstance(point, LatentPoint) else np.asarray(point, dtype=np.float64)
    u = geo.log_map_origin(p, c_aug) / encoder.scales
    flat = encoder.mean + u @ encoder.basis.T
    out = flat.reshape(p.shape[:-1] + tuple(encoder.shape))
    return out if rest is None else out + rest


def perturb(p, sigma, c_aug, rng):
    if sigma < 0:
        raise ContractError("sigma must be non-negative")
    u = geo.log_map_origin(p.point, c_aug)
    u = u + sigma * rng.normal(size=u.shape)
    return LatentPoint(geo.exp_map_origin(u, c_aug), p.label, PERTURBED, p.anchor)


def interpolate_pair(p, q, t, c_aug):
    if p.label != q.label:
        raise ContractError(f"cannot interpolate across classes ({p.label} vs {q.label})")
    anchor = p.anchor if t < 0.5 else q.anchor
    return LatentPoint(geo.geodesic_interpolate(p.point, q.point, t, c_aug), p.label, INTERPOLATED, anchor)


def synthesize_class(points, label, count, config, rng, anchors=None):
    """``count`` latent points for one class: half perturbed, half interpolated.

    ``anchors`` are the dataset indices of ``points``; each synthetic point
    remembers the anchor of its source (the nearer endpoint when interpolating).
    """
    if anchors is None:
        anchors = np.arange(len(points))
    n = len(points)
    n_interp = count // 2 if n >= 2 else 0
    if n < 2 and count:
        log.warning("class %d has %d sample(s); using perturbation only", label, n)
    out = []
    for _ in range(count - n_interp):
        i = rng.integers(n)
        out.append(perturb(LatentPoint(points[i], label, anchor=anchors[i]), config.sigma, config.c_aug, rng))
    lo, hi = config.t_range
    for _ in range(n_interp):
        i, j = rng.choice(n, size=2, replace=False)
        t = rng.uniform(lo, hi)
        p = LatentPoint(points[i], label, anchor=anchors[i])
        q = LatentPoint(points[j], label, anchor=anchors[j])
        out.append(interpolate_pair(p, q, t, config.c_aug))
    return out


def augment_dataset(dataset, config, encoder=None):
    """Append decoded synthetic samples to ``dataset``; returns ``(augmented, latent points)``.

    Decoded windows carry the off-subspace residual of their anchor sample, so
    synthetic samples vary along the principal axes and keep realistic detail.

    Each class draws from its own stream seeded by ``(config.seed, class)``, so
    the result does not depend on the order classes are processed in.
    """
    if encoder is None:
        encoder = fit_encoder(dataset.data, config.latent_dim)
    latent = geo.exp_map_origin(tangent(dataset.data, encoder), config.c_aug)
    synthetic = []
    for k in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == k)
        count = config.per_class(len(members))
        if count == 0:
            continue
        if len(members) == 0:
            raise ContractError(f"class {k} has no samples to augment from")
        rng = np.random.default_rng([config.seed, k])
        synthetic.extend(synthesize_class(latent[members], k, count, config, rng, anchors=members))
    if not synthetic:
        return dataset, []
    points = np.stack([s.point for s in synthetic])
    anchors = np.array([s.anchor for s in synthetic])
    extra = Dataset(
        data=decode(points, encoder, config.c_aug, rest=residual(dataset.data[anchors], encoder)),
        labels=np.array([s.label for s in synthetic]),
        class_names=dataset.class_names,
        seed=dataset.seed,
        provenance=np.array([s.provenance for s in synthetic], dtype=np.uint8),
    )
    return dataset.concat(extra), synthetic


def label_fidelity(dataset, synthetic, encoder, c_aug):
    """Share of synthetic points nearest to their own class centroid in tangent coordinates.

    Centroids are the class means of the encoded original samples.
    """
    if not synthetic:
        return 1.0
    originals = dataset.provenance == ORIGINAL
    u = tangent(dataset.data[originals], encoder)
    labels = dataset.labels[originals]
    present = np.unique(labels)
    centroids = np.stack([u[labels == k].mean(axis=0) for k in present])
    v = geo.log_map_origin(np.stack([s.point for s in synthetic]), c_aug)
    nearest = present[np.argmin(((v[:, None] - centroids[None]) ** 2).sum(-1), axis=1)]
    return float(np.mean(nearest == np.array([s.label for s in synthetic])))


def jitter_dataset(dataset, count_per_class=None, seed=0, noise=0.1, scale=0.1):
    """Signal-space baseline: random amplitude scaling plus white jitter.

    ``noise`` is the jitter std in the (standardized) data units and each copy
    is scaled by a factor drawn from ``[1 - scale, 1 + scale]``.
    """
    parts = [dataset]
    for k in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == k)
        count = 2 * len(members) if count_per_class is None else count_per_class
        if count == 0 or len(members) == 0:
            continue
        rng = np.random.default_rng([seed, k, 1])
        src = dataset.data[rng.choice(members, size=count)]
        factor = rng.uniform(1 - scale, 1 + scale, size=(count, 1, 1))
        data = src * factor + noise * rng.normal(size=src.shape)
        parts.append(
            replace(
                dataset.subset(members[:0]),
                data=data,
                labels=np.full(count, k),
                domains=np.zeros(count, dtype=np.uint8),
                provenance=np.full(count, JITTERED, dtype=np.uint8),
            )
        )
    out = parts[0]
    for part in parts[1:]:
        out = out.concat(part)
    return out


__all__ = [
    "AugmentConfig",
    "Encoder",
    "LatentPoint",
    "augment_dataset",
    "decode",
    "encode",
    "fit_encoder",
    "interpolate_pair",
    "jitter_dataset",
    "label_fidelity",
    "perturb",
    "residual",
    "tangent",
]
