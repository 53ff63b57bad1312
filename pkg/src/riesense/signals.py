"""Synthetic multi-channel event generator, domain shift and standardization.

Windows are trigger-aligned: each event starts near a fixed pre-trigger offset,
reaches the channel nearest its source first and the others with a delay and
attenuation that grow with channel distance.  Every class mixes a slow,
sign-consistent strain signature with a class-specific vibration texture.  The
archetypes are synthetic stand-ins named after six industrial event types.
They are not models of any measured data.

Time is measured in samples; frequencies are in cycles per 1024 samples (so a
1024-sample window spans one "second").
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import resample

from .dataset import DOMAIN_SHIFTED, DOMAIN_SOURCE, Dataset
from .errors import ContractError

log = logging.getLogger(__name__)

CLASS_NAMES = (
    "impact hammer",
    "knocking",
    "percussion drill",
    "large excavator",
    "subway",
    "engine idle",
)
SAMPLE_RATE = 1024.0
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class ShiftParams:
    """Test-time distribution shift.  The defaults are the identity."""

    gain: float = 1.0
    noise_db: float | None = None
    warp: float = 1.0


@dataclass(frozen=True)
class GeneratorConfig:
    counts: tuple = (300,) * 6
    channels: int = 10
    timesteps: int = 1024
    snr_db: float = -12.0
    onset: int = 96
    onset_jitter: int = 6
    shift: ShiftParams = field(default_factory=lambda: ShiftParams(gain=1.5, noise_db=10.0, warp=1.06))
    seed: int = 0

    def __post_init__(self):
        if len(self.counts) != len(CLASS_NAMES):
            raise ContractError(f"need one count per class ({len(CLASS_NAMES)}), got {len(self.counts)}")
        if any(n < 0 for n in self.counts):
            raise ContractError("class counts must be non-negative")
        if not np.isfinite(self.snr_db):
            raise ContractError("snr_db must be finite")


def _ring(t, freq, tau):
    """Damped sinusoid starting at ``t = 0``; zero before."""
    on = t >= 0
    ts = np.where(on, t, 0.0)
    return on * np.exp(-ts / tau) * np.sin(2 * np.pi * freq * ts / SAMPLE_RATE)


def _bump(t, center, width):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _lowpass_noise(rng, n, cutoff):
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[freqs > cutoff] = 0.0
    out = np.fft.irfft(spec, n)
    return out / (out.std() + 1e-12)


def _source_waveform(class_id, t, rng):
    """Event waveform at the source, as a function of time since onset."""
    n = t.size
    if class_id == 0:  # impact hammer: a few hard, short broadband hits
        slow = -4.8 * _ring(t, 3.0, 120.0)
        fast = np.zeros(n)
        hits = [0.0] + list(np.sort(rng.uniform(150, 800, size=rng.integers(1, 4))))
        for h in hits:
            amp = rng.uniform(2.5, 4.0) if h == 0 else rng.uniform(1.0, 2.5)
            fast += amp * _ring(t - h, rng.uniform(280, 380), 4.0)
        return slow + fast
    if class_id == 1:  # knocking: quasi-periodic medium impulses
        period = rng.uniform(118, 122)
        fast = np.zeros(n)
        slow = np.zeros(n)
        k = 0
        while k * period < n:
            at = k * period + rng.normal(0, 3)
            fast += rng.uniform(0.8, 1.2) * _ring(t - at, rng.uniform(140, 170), 10.0)
            slow -= 1.2 * _bump(t, k * period + 20, 20)
            k += 1
        return slow + fast
    if class_id == 2:  # percussion drill: dense impulse train + strong harmonic
        rate = rng.uniform(59.9, 60.1)
        on = t >= 0
        harmonic = on * np.sin(2 * np.pi * rate * t / SAMPLE_RATE)
        period = SAMPLE_RATE / rate
        fast = np.zeros(n)
        k = 0
        while k * period < n:
            fast += 0.5 * _ring(t - k * period, 220.0, 3.0)
            k += 1
        # load shifts from compressive to tensile while drilling
        slow = 1.2 * on * np.cos(np.pi * np.clip(t, 0, 900) / 900)
        return slow + 0.6 * harmonic + fast
    if class_id == 3:  # large excavator: low-frequency chirp bursts
        out = np.zeros(n)
        for start in (0.0, rng.uniform(410, 430)):
            tb = t - start
            length = rng.uniform(260, 300)
            inside = (tb >= 0) & (tb < length)
            phase = 2 * np.pi * (8.0 * tb + 0.5 * (30.0 - 8.0) * tb ** 2 / length) / SAMPLE_RATE
            out += inside * np.sin(np.pi * tb / length) ** 2 * np.sin(phase) * 1.5
            out -= 1.0 * _bump(tb, length / 2, 60.0)
        return out
    if class_id == 4:  # subway: long smooth broadband swell
        swell = _bump(t, rng.uniform(380, 420), rng.uniform(150, 180))
        return 1.5 * swell + 0.8 * swell * _lowpass_noise(rng, n, 90.0)
    if class_id == 5:  # engine idle: stationary harmonic stack, slow AM
        f0 = rng.uniform(29.5, 30.5)
        am = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(1.5, 2.5) * t / SAMPLE_RATE + rng.uniform(0, 2 * np.pi))
        out = np.zeros(n)
        for h, amp in enumerate((1.0, 0.6, 0.4, 0.25, 0.15), start=1):
            out += amp * np.sin(2 * np.pi * h * f0 * t / SAMPLE_RATE + rng.uniform(0, 2 * np.pi))
        # idling load: a steady strain offset under the vibration
        return 0.4 * am * out + 0.8
    raise ContractError(f"class id must be in 0..{len(CLASS_NAMES) - 1}, got {class_id}")


def event_components(class_id, config, rng):
    """Clean multi-channel event and the noise that ``generate_event`` adds to it."""
    if not 0 <= class_id < len(CLASS_NAMES):
        raise ContractError(f"class id must be in 0..{len(CLASS_NAMES) - 1}, got {class_id}")
    c, n = config.channels, config.timesteps
    onset = config.onset + rng.integers(-config.onset_jitter, config.onset_jitter + 1)
    # events occur in the monitored middle third of the array
    source = rng.uniform((c - 1) / 3, 2 * (c - 1) / 3)
    distance = np.abs(np.arange(c) - source)
    delays = 2.5 * distance
    gains = np.exp(-distance / 8.0) * rng.uniform(0.9, 1.1, size=c)
    # stationary sources (engine idle) have no onset
    start = -float(n) if class_id == 5 else float(onset)
    clean = np.empty((c, n))
    base = np.arange(n, dtype=np.float64)
    state = rng.bit_generator.state
    for ch in range(c):
        # the same source realisation reaches every channel
        rng.bit_generator.state = state
        clean[ch] = gains[ch] * _source_waveform(class_id, base - start - delays[ch], rng)
    power = np.mean(clean ** 2)
    noise = rng.normal(size=(c, n)) * np.sqrt(power * 10 ** (-config.snr_db / 10))
    return clean, noise


def generate_event(class_id, config, rng):
    clean, noise = event_components(class_id, config, rng)
    return clean + noise


def time_warp(window, factor):
    """Stretch ``window`` in time by ``factor`` with band-limited resampling.

    Linear interpolation would low-pass the signal, so the stretch is done in
    the Fourier domain and the result is cut (or reflect-padded) back to the
    original length.
    """
    n = window.shape[-1]
    target = int(round(n * factor))
    if factor < 1.0:
        reps = int(np.ceil(1.0 / factor)) + 1
        padded = np.pad(window, [(0, 0)] * (window.ndim - 1) + [(0, n * reps)], mode="reflect")
        stretched = resample(padded, target * (reps + 1), axis=-1)
    else:
        stretched = resample(window, target, axis=-1)
    return stretched[..., :n]


def apply_domain_shift(window, shift, rng):
    """Gain drift, additive noise at ``noise_db`` below the window power, time warp.

    A warp factor above 1 stretches the window in time, so frequencies scale by
    ``1 / warp``.
    """
    window = np.asarray(window, dtype=np.float64)
    out = window
    if shift.warp != 1.0:
        out = time_warp(out, shift.warp)
    if shift.gain != 1.0:
        out = out * shift.gain
    if shift.noise_db is not None:
        power = np.mean(out ** 2)
        out = out + rng.normal(size=out.shape) * np.sqrt(power * 10 ** (-shift.noise_db / 10))
    return out


def _sample_rng(seed, class_id, index, stream=0):
    # independent per-sample streams: SeedSequence over (seed, stream, class, index)
    return np.random.default_rng([seed, stream, class_id, index])


def generate_dataset(config):
    """All windows of the source domain, ordered by class then index."""
    windows, labels = [], []
    for class_id, count in enumerate(config.counts):
        for i in range(count):
            windows.append(generate_event(class_id, config, _sample_rng(config.seed, class_id, i)))
            labels.append(class_id)
    data = np.stack(windows) if windows else np.zeros((0, config.channels, config.timesteps))
    return Dataset(
        data=data,
        labels=np.array(labels, dtype=np.int64),
        class_names=list(CLASS_NAMES),
        seed=config.seed,
    )


def shift_dataset(dataset, shift, seed):
    """Apply ``shift`` to every sample with per-sample derived streams."""
    out = np.empty_like(dataset.data)
    for i, window in enumerate(dataset.data):
        out[i] = apply_domain_shift(window, shift, _sample_rng(seed, 0, i, stream=1))
    return replace(dataset, data=out, domains=np.full(len(dataset), DOMAIN_SHIFTED, dtype=np.uint8))


def fit_standardization(data):
    """Per-channel mean and std over samples and time, with a std floor."""
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] == 0:
        raise ContractError("cannot standardize an empty dataset")
    mean = data.mean(axis=(0, 2))
    std = data.std(axis=(0, 2))
    if np.any(std < STD_FLOOR):
        log.warning("channels %s have zero variance; flooring std at %g", np.flatnonzero(std < STD_FLOOR), STD_FLOOR)
        std = np.maximum(std, STD_FLOOR)
    return mean, std


def apply_standardization(dataset, mean, std):
    data = (dataset.data - mean[None, :, None]) / std[None, :, None]
    return replace(dataset, data=data, stats={"mean": list(map(float, mean)), "std": list(map(float, std))})


def standardize(train, *others):
    """Standardize ``train`` with its own statistics and ``others`` with the same ones."""
    mean, std = fit_standardization(train.data)
    return (apply_standardization(train, mean, std),) + tuple(apply_standardization(d, mean, std) for d in others)


def band_energies(data, bands=16):
    """Log energy in equal-width frequency bands, averaged over channels."""
    spec = np.abs(np.fft.rfft(np.asarray(data), axis=-1)) ** 2
    spec = spec[..., 1:]
    edges = np.linspace(0, spec.shape[-1], bands + 1).astype(int)
    energy = np.stack([spec[..., a:b].sum(axis=-1) for a, b in zip(edges[:-1], edges[1:])], axis=-1)
    return np.log(energy.mean(axis=-2) + 1e-12)


__all__ = [
    "CLASS_NAMES",
    "DOMAIN_SOURCE",
    "DOMAIN_SHIFTED",
    "GeneratorConfig",
    "ShiftParams",
    "apply_domain_shift",
    "apply_standardization",
    "time_warp",
    "band_energies",
    "event_components",
    "fit_standardization",
    "generate_dataset",
    "generate_event",
    "shift_dataset",
    "standardize",
]
