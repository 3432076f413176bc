"""Data augmentation: mixup, device spectrum correction, pitch shift, audio mix.

Pitch shift and audio mix act on waveforms at load time; mixup acts on whole
batches (feature domain by default); spectrum correction multiplies magnitude
spectra per frequency bin before Mel filtering.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .audio import N_BINS, AudioClip, resample_linear, to_clip_length
from .errors import UsageError

log = logging.getLogger(__name__)

PITCH_FACTORS = (0.90, 0.95, 1.05, 1.10)
EPS_CORRECTION = 1e-8
MIX_DEVICE_ID = "mix"


@dataclass
class AugmentConfig:
    mixup_prob: float = 0.5
    mixup_alpha: float = 0.4
    mixup_domain: str = "feature"           # "feature" or "waveform"
    pitch_prob: float = 0.3
    pitch_factors: tuple = PITCH_FACTORS
    audio_mix_prob: float = 0.3
    audio_mix_low: float = 0.4
    audio_mix_high: float = 0.6
    spectrum_correction: bool = True


# -- mixup -------------------------------------------------------------------


@dataclass
class MixupBatch:
    eta: float
    pair_index: np.ndarray


def mixup(x_i: np.ndarray, y_i: np.ndarray, x_j: np.ndarray, y_j: np.ndarray,
          eta: float):
    """Convex combination of two batches, labels mixed with the same weight."""
    if x_i.shape != x_j.shape or y_i.shape != y_j.shape:
        raise UsageError(f"mixup shape mismatch: {x_i.shape} vs {x_j.shape}, "
                         f"{y_i.shape} vs {y_j.shape}")
    if eta == 1.0:
        return x_i.copy(), y_i.copy()
    if eta == 0.0:
        return x_j.copy(), y_j.copy()
    x = eta * x_i + (1.0 - eta) * x_j
    y = eta * y_i + (1.0 - eta) * y_j
    return x, y


def draw_mixup(batch_size: int, rng: np.random.Generator,
               alpha: float = 0.4) -> MixupBatch:
    """Pair the batch with a permutation of itself and draw the Beta weight."""
    return MixupBatch(eta=float(rng.beta(alpha, alpha)),
                      pair_index=rng.permutation(batch_size))


def apply_mixup(x: np.ndarray, y: np.ndarray, mb: MixupBatch):
    return mixup(x, y, x[mb.pair_index], y[mb.pair_index], mb.eta)


# -- spectrum correction ------------------------------------------------------


class SpectrumCorrection:
    """Per-device frequency-response correction coefficients (2049 bins)."""

    def __init__(self, coeffs: dict[str, np.ndarray]):
        for dev, c in coeffs.items():
            c = np.asarray(c, dtype=np.float64)
            if c.shape != (N_BINS,):
                raise UsageError(f"device {dev}: expected {N_BINS} coefficients, "
                                 f"got shape {c.shape}")
            if not (np.isfinite(c).all() and (c > 0).all()):
                raise UsageError(f"device {dev}: coefficients must be positive "
                                 "and finite")
            coeffs[dev] = c
        self.coeffs = coeffs
        self._warned: set[str] = set()

    def coeff_for(self, device_id: str) -> np.ndarray | None:
        c = self.coeffs.get(device_id)
        if c is None and device_id not in self._warned:
            self._warned.add(device_id)
            log.warning("no spectrum correction for device %r; passing through",
                        device_id)
        return c

    def apply(self, spec: np.ndarray, device_id: str) -> np.ndarray:
        """Multiply a (frames, 2049) magnitude spectrum per bin."""
        c = self.coeff_for(device_id)
        if c is None:
            return spec
        return spec * c[None, :]

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for dev in sorted(self.coeffs):
                writer.writerow([dev] + [repr(float(v)) for v in self.coeffs[dev]])

    @classmethod
    def load_csv(cls, path) -> "SpectrumCorrection":
        coeffs = {}
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                coeffs[row[0]] = np.array([float(v) for v in row[1:]])
        return cls(coeffs)


def estimate_correction(spectra_by_device: dict[str, np.ndarray]) -> SpectrumCorrection:
    """Fit coefficients from aligned mean magnitude spectra.

    Each device contributes one or more (2049,) spectra of shared content;
    the reference response is the across-device mean of per-device means.
    """
    if not spectra_by_device:
        raise UsageError("spectrum correction needs at least one device")
    responses = {}
    for dev, spectra in spectra_by_device.items():
        arr = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
        if arr.shape[1] != N_BINS:
            raise UsageError(f"device {dev}: spectra must have {N_BINS} bins")
        responses[dev] = arr.mean(axis=0)
    reference = np.mean(list(responses.values()), axis=0)
    return SpectrumCorrection({dev: reference / (resp + EPS_CORRECTION)
                               for dev, resp in responses.items()})


# -- waveform-domain augmentations --------------------------------------------


def pitch_shift(clip: AudioClip, factor: float) -> AudioClip:
    """Scale all frequencies by ``factor`` via linear resampling."""
    if factor <= 0:
        raise UsageError(f"pitch factor must be positive, got {factor}")
    shifted = resample_linear(clip.samples.astype(np.float64), 1.0 / factor)
    samples = to_clip_length(shifted).astype(np.float32)
    return AudioClip(samples=samples, scene_label=clip.scene_label,
                     device_id=clip.device_id, city=clip.city)


def audio_mix(clip_a: AudioClip, clip_b: AudioClip, w: float) -> AudioClip:
    """Blend two same-class clips; the result carries a synthetic device id."""
    if clip_a.scene_label != clip_b.scene_label:
        raise UsageError(f"audio mix needs matching labels, got "
                         f"{clip_a.scene_label} and {clip_b.scene_label}")
    samples = w * clip_a.samples.astype(np.float64) \
        + (1.0 - w) * clip_b.samples.astype(np.float64)
    return AudioClip(samples=samples.astype(np.float32),
                     scene_label=clip_a.scene_label,
                     device_id=MIX_DEVICE_ID, city=clip_a.city)


def augment_clip(clip: AudioClip, same_class_pool, rng: np.random.Generator,
                 cfg: AugmentConfig) -> AudioClip:
    """Apply the per-clip waveform policy: maybe mix, maybe pitch-shift.

    ``same_class_pool`` is a sequence of clips sharing the label (the clip
    itself may be among them; self-mix is harmless).
    """
    if len(same_class_pool) > 0 and rng.random() < cfg.audio_mix_prob:
        partner = same_class_pool[rng.integers(len(same_class_pool))]
        w = rng.uniform(cfg.audio_mix_low, cfg.audio_mix_high)
        clip = audio_mix(clip, partner, w)
    if rng.random() < cfg.pitch_prob:
        factor = cfg.pitch_factors[rng.integers(len(cfg.pitch_factors))]
        clip = pitch_shift(clip, factor)
    return clip
