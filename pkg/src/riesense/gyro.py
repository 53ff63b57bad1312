"""Differentiable Poincare-ball operations built from tape primitives.

These mirror :mod:`riesense.geometry` but accept :class:`~riesense.autodiff.Var`
operands (including a curvature ``Var``) so that gradients flow to weights and
to the curvature.  The numpy versions stay the reference the tests compare
against.
"""

import numpy as np

from . import autodiff as ad
from .geometry import BALL_EPS, MIN_NORM


def _safe_norm(x):
    return ad.maximum(ad.norm(x), MIN_NORM)


def curvature(raw):
    """Positive curvature from its unconstrained parameter."""
    return ad.softplus(raw)


def project(x, c):
    sqrt_c = ad.sqrt(c)
    max_norm = (1.0 - BALL_EPS) / sqrt_c
    n = _safe_norm(x)
    return x * ad.minimum(max_norm / n, 1.0)


def expmap0(v, c):
    sqrt_c = ad.sqrt(c)
    scaled = sqrt_c * _safe_norm(v)
    return project(ad.tanh(scaled) * v / scaled, c)


def logmap0(x, c):
    x = project(x, c)
    scaled = ad.sqrt(c) * _safe_norm(x)
    return ad.atanh(scaled) * x / scaled


def mobius_add(x, y, c):
    xy = ad.dot(x, y)
    x2 = ad.dot(x, x)
    y2 = ad.dot(y, y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return project(num / den, c)


def mobius_matvec(x, weight, c):
    """Mobius transform of ``x`` by ``weight`` using row vectors: ``x @ weight``.

    Zero input or zero image goes to the origin: the norm floors make the ratio
    finite and the output is a multiple of ``x @ weight``.
    """
    sqrt_c = ad.sqrt(c)
    mx = x @ weight
    x_norm = _safe_norm(x)
    mx_norm = _safe_norm(mx)
    radius = ad.tanh(mx_norm / x_norm * ad.atanh(sqrt_c * x_norm)) / sqrt_c
    return project(radius * mx / mx_norm, c)


def distance_to_origin_ok(x, c):
    """Numpy check that every row of ``x`` respects the ball margin."""
    value = x.value if isinstance(x, ad.Var) else np.asarray(x)
    cv = float(c.value) if isinstance(c, ad.Var) else float(c)
    norms = np.sqrt(cv) * np.linalg.norm(value, axis=-1)
    return bool(np.all(norms <= (1.0 - BALL_EPS) * (1.0 + 1e-12)))
