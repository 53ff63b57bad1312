"""Patch-token sequence classifier with hyperbolic embedding and attention.

A window of shape ``(channels, timesteps)`` is cut into ``timesteps / patch``
patches.  Each flattened (standardized) patch is exp-mapped into the ball as a
tangent vector, sent through ``mobius_matvec`` and fused with a learned
positional point by Mobius addition.  Standardized patches have tangent norms
well above ``1 / sqrt(c)``, so the exp map lands near the boundary and the
embedding depends mostly on the patch direction.
``layers`` blocks of hyperbolic attention and a tangent-space feed-forward
(both with Mobius residuals) follow.  The head averages the log-mapped tokens
and applies a linear map to class scores.

The ``"euclidean"`` variant replaces every hyperbolic piece with its flat
counterpart (linear embedding, vector addition, scaled dot-product attention)
and has no curvature parameter.
"""

import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import gyro
from .attention import VARIANTS, attention_block
from .errors import ContractError, FormatError, UnsupportedVersionError
from .geometry import softplus_inverse

CHECKPOINT_MAGIC = b"RIES"
CHECKPOINT_VERSION = 1
_CONFIG = struct.Struct("<IIIIIIIIdB")
_VARIANT_CODE = {name: i for i, name in enumerate(VARIANTS)}


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 10
    window: int = 1024
    patch: int = 64
    model_dim: int = 32
    layers: int = 2
    heads: int = 4
    classes: int = 6
    ff_dim: int = 64
    initial_curvature: float = 1.0
    variant: str = "full"

    def __post_init__(self):
        if self.window % self.patch:
            raise ContractError(f"window {self.window} not divisible by patch {self.patch}")
        if self.classes < 2:
            raise ContractError("need at least two classes")
        if self.model_dim % self.heads:
            raise ContractError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if not self.initial_curvature > 0:
            raise ContractError("initial curvature must be positive")
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}")
        if min(self.channels, self.patch, self.model_dim, self.layers, self.heads, self.ff_dim) < 1:
            raise ContractError("all sizes must be >= 1")

    @property
    def length(self):
        return self.window // self.patch

    @property
    def patch_dim(self):
        return self.channels * self.patch

    @property
    def hyperbolic(self):
        return self.variant != "euclidean"


def ablate_euclidean(config):
    """Same sizes, flat geometry everywhere."""
    return replace(config, variant="euclidean")


def init_params(config, seed=0):
    rng = np.random.default_rng(seed)
    d, f = config.model_dim, config.ff_dim

    def uniform(fan_in, shape):
        a = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-a, a, size=shape)

    store = ad.ParamStore()
    store.add("embed.weight", uniform(config.patch_dim, (config.patch_dim, d)))
    pos = rng.normal(size=(config.length, d))
    pos *= rng.uniform(0.0, 0.01, size=(config.length, 1)) / np.linalg.norm(pos, axis=-1, keepdims=True)
    store.add("embed.position", pos)
    for i in range(config.layers):
        for name in ("wq", "wk", "wv", "wo"):
            store.add(f"layer{i}.attn.{name}", uniform(d, (d, d)))
        store.add(f"layer{i}.ff.w1", uniform(d, (d, f)))
        store.add(f"layer{i}.ff.b1", np.zeros(f))
        store.add(f"layer{i}.ff.w2", uniform(f, (f, d)))
        store.add(f"layer{i}.ff.b2", np.zeros(d))
    store.add("head.weight", uniform(d, (d, config.classes)))
    store.add("head.bias", np.zeros(config.classes))
    if config.hyperbolic:
        store.add("curvature.raw", softplus_inverse(config.initial_curvature))
    return store


def patchify(windows, config):
    """``(batch, channels, window)`` -> ``(batch, length, channels * patch)``."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    if windows.shape[1:] != (config.channels, config.window):
        raise ContractError(
            f"expected windows of shape ({config.channels}, {config.window}), got {windows.shape[1:]}"
        )
    b = windows.shape[0]
    out = windows.reshape(b, config.channels, config.length, config.patch).transpose(0, 2, 1, 3)
    return out.reshape(b, config.length, config.patch_dim)


class BallViolation(AssertionError):
    pass


def _check(x, c, where):
    if not gyro.distance_to_origin_ok(x, c):
        raise BallViolation(f"token left the ball after {where}")


def build_logits(tape, p, windows, config, check_ball=False, record=None):
    """Record the forward pass on ``tape``; ``p`` maps parameter names to Vars."""
    u = tape.const(patchify(windows, config))
    if not config.hyperbolic:
        x = u @ p["embed.weight"] + p["embed.position"]
        for i in range(config.layers):
            x = _euclidean_block(x, p, i, config, record)
        pooled = x.mean(axis=1)
        return pooled @ p["head.weight"] + p["head.bias"]

    c = gyro.curvature(p["curvature.raw"])
    x = gyro.mobius_matvec(gyro.expmap0(u, c), p["embed.weight"], c)
    x = gyro.mobius_add(x, gyro.expmap0(p["embed.position"], c), c)
    if check_ball:
        _check(x, c, "embedding")
    for i in range(config.layers):
        x = _hyperbolic_block(x, p, i, c, config, record)
        if check_ball:
            _check(x, c, f"layer {i}")
    pooled = gyro.logmap0(x, c).mean(axis=1)
    return pooled @ p["head.weight"] + p["head.bias"]


def _attn_weights(p, i):
    return {k: p[f"layer{i}.attn.{k}"] for k in ("wq", "wk", "wv", "wo")}


def _feedforward(u, p, i):
    h = ad.tanh(u @ p[f"layer{i}.ff.w1"] + p[f"layer{i}.ff.b1"])
    return h @ p[f"layer{i}.ff.w2"] + p[f"layer{i}.ff.b2"]


def _hyperbolic_block(x, p, i, c, config, record):
    x = attention_block(x, _attn_weights(p, i), c, config.heads, config.variant, record)
    ff = _feedforward(gyro.logmap0(x, c), p, i)
    return gyro.mobius_add(x, gyro.expmap0(ff, c), c)


def _euclidean_block(x, p, i, config, record):
    x = attention_block(x, _attn_weights(p, i), None, config.heads, "euclidean", record)
    return x + _feedforward(x, p, i)


def cross_entropy(logits, labels):
    labels = np.asarray(labels)
    logp = ad.log_softmax(logits, axis=-1)
    picked = ad.take_along(logp, labels[:, None], axis=-1)
    return -picked.mean()


class RieModel:
    """A :class:`ModelConfig` paired with its parameter store."""

    def __init__(self, config, params=None, seed=0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    @property
    def curvature(self):
        if "curvature.raw" not in self.params:
            return None
        return float(np.logaddexp(0.0, self.params["curvature.raw"]))

    def _run(self, windows, trainable, check_ball=False, record=None):
        tape = ad.Tape()
        if trainable:
            leaves = self.params.bind(tape)
        else:
            leaves = {k: tape.const(v) for k, v in self.params.params.items()}
        return tape, leaves, build_logits(tape, leaves, windows, self.config, check_ball, record)

    def forward(self, windows, check_ball=False, record=None):
        """Class scores, shape ``(batch, classes)`` (or ``(classes,)`` for one window)."""
        single = np.ndim(windows) == 2
        _, _, logits = self._run(windows, False, check_ball, record)
        return logits.value[0] if single else logits.value

    def embed(self, windows):
        """Embedded token sequence(s) before the attention blocks."""
        tape = ad.Tape()
        p = {k: tape.const(v) for k, v in self.params.params.items()}
        u = tape.const(patchify(windows, self.config))
        if not self.config.hyperbolic:
            out = (u @ p["embed.weight"] + p["embed.position"]).value
        else:
            c = gyro.curvature(p["curvature.raw"])
            x = gyro.mobius_matvec(gyro.expmap0(u, c), p["embed.weight"], c)
            out = gyro.mobius_add(x, gyro.expmap0(p["embed.position"], c), c).value
        return out[0] if np.ndim(windows) == 2 else out

    def loss_and_grad(self, windows, labels, check_ball=False, with_logits=False):
        """Mean cross-entropy and a dict of gradients for every parameter.

        With ``with_logits`` the batch class scores are returned as a third item.
        """
        labels = np.asarray(labels)
        if labels.ndim != 1 or len(labels) == 0 or len(labels) != len(windows):
            raise ContractError("need a nonempty batch with one label per window")
        if labels.min() < 0 or labels.max() >= self.config.classes:
            raise ContractError(f"labels must lie in [0, {self.config.classes})")
        tape, leaves, logits = self._run(windows, True, check_ball)
        loss = cross_entropy(logits, labels)
        tape.backward(loss)
        grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}
        if with_logits:
            return float(loss.value), grads, logits.value
        return float(loss.value), grads

    def predict(self, windows, batch_size=64):
        scores = [self.forward(windows[i:i + batch_size]) for i in range(0, len(windows), batch_size)]
        return np.concatenate(scores).argmax(axis=-1) if scores else np.zeros(0, dtype=int)


def save_checkpoint(path, model, extras=None):
    """Write the RIES checkpoint: header, config, then named float64 blocks."""
    cfg = model.config
    blocks = dict(model.params.params)
    for name, value in (extras or {}).items():
        blocks[f"extra.{name}"] = np.asarray(value, dtype=np.float64)
    out = bytearray()
    out += CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
    out += _CONFIG.pack(
        cfg.channels, cfg.window, cfg.patch, cfg.model_dim, cfg.layers, cfg.heads, cfg.classes,
        cfg.ff_dim, cfg.initial_curvature, _VARIANT_CODE[cfg.variant],
    )
    out += struct.pack("<I", len(blocks))
    for name, value in blocks.items():
        encoded = name.encode("utf-8")
        value = np.asarray(value, dtype="<f8")
        out += struct.pack("<H", len(encoded)) + encoded
        out += struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape)
        out += value.tobytes()
    Path(path).write_bytes(bytes(out))
    return path


def load_checkpoint(path):
    """Return ``(model, extras)`` from a RIES checkpoint."""
    raw = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=pos)
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}", offset=4)
    fields = _CONFIG.unpack(take(_CONFIG.size, "config"))
    variants = {v: k for k, v in _VARIANT_CODE.items()}
    if fields[-1] not in variants:
        raise FormatError(f"unknown variant code {fields[-1]}", offset=pos - 1)
    try:
        config = ModelConfig(*fields[:-1], variant=variants[fields[-1]])
    except ContractError as exc:
        raise FormatError(f"invalid config in header: {exc}", offset=8) from None
    (count,) = struct.unpack("<I", take(4, "block count"))
    params, extras = ad.ParamStore(), {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(shape)) if rank else 1
        value = np.frombuffer(take(8 * size, f"block {name}"), dtype="<f8").reshape(shape).astype(np.float64)
        if name.startswith("extra."):
            extras[name[len("extra."):]] = value
        else:
            params.add(name, value)
    if pos != len(raw):
        raise FormatError("trailing bytes after the last block", offset=pos)
    expected = init_params(config)
    for name in expected:
        if name not in params or params[name].shape != expected[name].shape:
            raise FormatError(f"parameter {name} missing or misshapen")
    return RieModel(config, params), extras


def config_dict(config):
    return asdict(config)
