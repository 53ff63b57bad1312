"""Hyperbolic-attention event classification on multi-channel sensor windows.

Subpackages are plain modules: ``geometry`` (Poincare ball maps), ``autodiff``
(reverse-mode tape), ``gyro`` (differentiable ball operations), ``attention``,
``model``, ``signals`` and ``dataset`` (synthetic data and the SGLB format),
``augment`` (latent-ball augmentation), ``metrics`` and ``bench``
(experiment driver), and ``cli``.
"""

__version__ = "0.1.0"
