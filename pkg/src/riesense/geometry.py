"""Poincare-ball gyrovector operations in float64 numpy.

Points live in the open ball ``{x : sqrt(c) * |x| < 1}`` where ``c > 0`` is the
magnitude of the (negative) sectional curvature.  All functions act on the last
axis and broadcast over leading axes.  Every operation that produces a ball
point re-projects it to keep a margin of ``BALL_EPS`` from the boundary.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, InvalidInputError

BALL_EPS = 1e-5
ATANH_CLAMP = 1.0 - 1e-12
MIN_NORM = 1e-15
DENOM_MIN = 1e-12


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass
class CurvatureParam:
    """Trainable curvature magnitude, kept positive by a softplus."""

    raw: float

    @classmethod
    def from_value(cls, c):
        if not c > 0:
            raise InvalidInputError(f"curvature must be positive, got {c}")
        return cls(float(softplus_inverse(c)))

    def c(self):
        return float(softplus(self.raw))


def _as_array(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return x


def _check_c(c):
    c = float(c)
    if not np.isfinite(c) or c <= 0:
        raise InvalidInputError(f"curvature must be finite and positive, got {c}")
    return c


def _norm(x):
    return np.linalg.norm(x, axis=-1, keepdims=True)


def artanh(x):
    return np.arctanh(np.clip(x, -ATANH_CLAMP, ATANH_CLAMP))


def project_to_ball(x, c):
    """Pull ``x`` back inside the ball if it lies within ``BALL_EPS`` of the rim."""
    x = _as_array(x)
    c = _check_c(c)
    max_norm = (1.0 - BALL_EPS) / np.sqrt(c)
    norm = _norm(x)
    scale = np.where(norm >= max_norm, max_norm / np.maximum(norm, MIN_NORM), 1.0)
    return x * scale


def mobius_add(x, y, c):
    """Mobius addition ``x (+) y``; non-commutative, closed in the ball."""
    x = _as_array(x, "x")
    y = _as_array(y, "y")
    c = _check_c(c)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = np.sum(x * x, axis=-1, keepdims=True)
    y2 = np.sum(y * y, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    if np.any(np.abs(den) < DENOM_MIN):
        raise DegenerateError("Mobius addition denominator vanished")
    return project_to_ball(num / den, c)


def mobius_neg(x):
    return -np.asarray(x, dtype=np.float64)


def mobius_matvec(m, x, c):
    """Mobius matrix-vector transform of ``x`` by ``m`` (``m @ x`` in the ball).

    ``m`` has shape ``(out, in)``; ``x`` has trailing dimension ``in``.  The
    origin and the kernel of ``m`` both map to the origin.
    """
    m = _as_array(m, "m")
    x = _as_array(x, "x")
    c = _check_c(c)
    if m.ndim != 2 or m.shape[1] != x.shape[-1]:
        raise InvalidInputError(f"matrix {m.shape} incompatible with vector dim {x.shape[-1]}")
    sqrt_c = np.sqrt(c)
    mx = x @ m.T
    x_norm = _norm(x)
    mx_norm = _norm(mx)
    safe_x = np.maximum(x_norm, MIN_NORM)
    safe_mx = np.maximum(mx_norm, MIN_NORM)
    radius = np.tanh(mx_norm / safe_x * artanh(sqrt_c * x_norm)) / sqrt_c
    out = radius * mx / safe_mx
    out = np.where((x_norm <= MIN_NORM) | (mx_norm <= MIN_NORM), 0.0, out)
    return project_to_ball(out, c)


def exp_map_origin(v, c):
    v = _as_array(v, "v")
    c = _check_c(c)
    sqrt_c = np.sqrt(c)
    norm = np.maximum(_norm(v), MIN_NORM)
    return project_to_ball(np.tanh(sqrt_c * norm) * v / (sqrt_c * norm), c)


def log_map_origin(x, c):
    x = _as_array(x, "x")
    c = _check_c(c)
    x = project_to_ball(x, c)
    sqrt_c = np.sqrt(c)
    norm = np.maximum(_norm(x), MIN_NORM)
    return artanh(sqrt_c * norm) * x / (sqrt_c * norm)


def mobius_scalar(t, x, c):
    """Scale ``x`` by ``t`` along its geodesic through the origin."""
    return exp_map_origin(t * log_map_origin(x, c), c)


def ball_distance(x, y, c):
    """Geodesic distance; returns an array with the last axis reduced."""
    c = _check_c(c)
    diff = mobius_add(mobius_neg(x), y, c)
    sqrt_c = np.sqrt(c)
    return 2.0 / sqrt_c * artanh(sqrt_c * np.linalg.norm(diff, axis=-1))


def geodesic_interpolate(x, y, t, c):
    """Point a fraction ``t`` of the way from ``x`` to ``y`` along the geodesic."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"interpolation parameter must lie in [0, 1], got {t}")
    c = _check_c(c)
    step = mobius_add(mobius_neg(x), y, c)
    return mobius_add(x, mobius_scalar(t, step, c), c)


def inside_ball(x, c, margin=BALL_EPS):
    """True where ``sqrt(c) * |x| <= 1 - margin`` (with float slack)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt(c) * np.linalg.norm(x, axis=-1) <= (1.0 - margin) * (1.0 + 1e-12)
