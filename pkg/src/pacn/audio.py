"""Audio front-end: WAV ingestion and the 256-band log-Mel + delta feature.

Every clip is exactly 1 s at 44.1 kHz after ingestion. Framing uses a
4096-point Hamming window with hop round(4096/6) = 683 and symmetric
zero-padding, which pins the frame count at exactly 65.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.io.wavfile
import scipy.sparse

from .errors import IngestionError, UsageError

SAMPLE_RATE = 44100
CLIP_SAMPLES = 44100
WIN_LENGTH = 4096
HOP_LENGTH = round(WIN_LENGTH / 6)          # 683
N_FRAMES = 65
N_BINS = WIN_LENGTH // 2 + 1                # 2049
N_MELS = 256
LOG_FLOOR = 1e-10

FEATURE_MAGIC = b"PACNFEAT"
FEATURE_VERSION = 1


@dataclass
class AudioClip:
    samples: np.ndarray                     # float32, exactly CLIP_SAMPLES long
    sample_rate: int = SAMPLE_RATE
    scene_label: int = -1
    device_id: str = ""
    city: str = ""


@dataclass
class FeatureClip:
    feature: np.ndarray                     # (256, 65, 2) float32
    scene_label: int = -1
    device_id: str = ""


def resample_linear(samples: np.ndarray, ratio: float) -> np.ndarray:
    """Linear-interpolation resample; output length scales by ``ratio``."""
    if ratio <= 0:
        raise UsageError(f"resample ratio must be positive, got {ratio}")
    n_in = len(samples)
    n_out = int(round(n_in * ratio))
    if n_out == n_in:
        return samples.copy()
    pos = np.arange(n_out, dtype=np.float64) / ratio
    return np.interp(pos, np.arange(n_in, dtype=np.float64), samples)


def to_clip_length(samples: np.ndarray, n: int = CLIP_SAMPLES) -> np.ndarray:
    """Trailing zero-pad short clips, center-crop long ones."""
    if len(samples) < n:
        return np.pad(samples, (0, n - len(samples)))
    if len(samples) > n:
        start = (len(samples) - n) // 2
        return samples[start:start + n]
    return samples


def read_wav(path, scene_label: int = -1, device_id: str = "", city: str = "") -> AudioClip:
    """Read a PCM WAV file as a mono, [-1,1]-scaled, 1 s clip."""
    try:
        rate, data = scipy.io.wavfile.read(path)
    except Exception as e:
        raise IngestionError(f"cannot read WAV file {path}: {e}") from None
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise IngestionError(f"unsupported sample format {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if rate != SAMPLE_RATE:
        x = resample_linear(x, SAMPLE_RATE / rate)
    x = to_clip_length(x)
    return AudioClip(samples=x.astype(np.float32), scene_label=scene_label,
                     device_id=device_id, city=city)


def write_wav(path, samples: np.ndarray):
    """Write a mono clip as 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767)
    scipy.io.wavfile.write(path, SAMPLE_RATE, pcm.astype(np.int16))


@lru_cache(maxsize=1)
def hamming_window() -> np.ndarray:
    return np.hamming(WIN_LENGTH).astype(np.float64)


def frame_and_window(clip) -> np.ndarray:
    """Slice a clip into 65 Hamming-windowed frames of 4096 samples."""
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    if len(samples) != CLIP_SAMPLES:
        raise UsageError(f"expected {CLIP_SAMPLES} samples, got {len(samples)}")
    pad_total = HOP_LENGTH * (N_FRAMES - 1) + WIN_LENGTH - CLIP_SAMPLES
    lo = pad_total // 2
    x = np.pad(samples.astype(np.float64), (lo, pad_total - lo))
    idx = np.arange(N_FRAMES)[:, None] * HOP_LENGTH + np.arange(WIN_LENGTH)[None, :]
    return x[idx] * hamming_window()


def stft_magnitude(frames: np.ndarray) -> np.ndarray:
    """(frames, 4096) -> (frames, 2049) spectral magnitudes."""
    return np.abs(np.fft.rfft(frames, axis=-1))


def stft_power(frames: np.ndarray) -> np.ndarray:
    """(frames, 4096) -> (frames, 2049) squared magnitudes."""
    spec = np.fft.rfft(frames, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=1)
def mel_filterbank() -> np.ndarray:
    """(256, 2049) triangular filters, 0..22050 Hz, each with peak height 1."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(SAMPLE_RATE / 2),
                                  N_MELS + 2))
    bin_hz = np.arange(N_BINS) * (SAMPLE_RATE / WIN_LENGTH)
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lo) / (center - lo)
    falling = (hi - bin_hz[None, :]) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


@lru_cache(maxsize=1)
def _mel_sparse():
    return scipy.sparse.csr_matrix(mel_filterbank().astype(np.float32))


def mel_log(power: np.ndarray) -> np.ndarray:
    """(frames, 2049) power -> (256, frames) log-Mel."""
    banded = _mel_sparse() @ power.astype(np.float32).T
    return np.log(banded + LOG_FLOOR)


def delta_coefficients(logmel: np.ndarray) -> np.ndarray:
    """Regression delta over time, window N=2, edge frames replicated."""
    p = np.pad(logmel, ((0, 0), (2, 2)), mode="edge")
    return (1.0 * (p[:, 3:-1] - p[:, 1:-3]) + 2.0 * (p[:, 4:] - p[:, :-4])) / 10.0


def extract_feature(clip: AudioClip, spectrum_coeffs: np.ndarray | None = None) -> FeatureClip:
    """Full front-end: frames -> (corrected) spectrum -> log-Mel -> +delta.

    ``spectrum_coeffs``, if given, multiply the magnitude spectrum per bin
    before Mel filtering (device response correction).
    """
    frames = frame_and_window(clip)
    if spectrum_coeffs is not None:
        mag = stft_magnitude(frames) * spectrum_coeffs[None, :]
        power = mag ** 2
    else:
        power = stft_power(frames)
    logmel = mel_log(power)
    delta = delta_coefficients(logmel)
    feature = np.stack([logmel, delta], axis=-1).astype(np.float32)
    return FeatureClip(feature=feature, scene_label=clip.scene_label,
                       device_id=clip.device_id)


# -- flat binary feature cache ----------------------------------------------


def write_feature_cache(path, clips):
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", FEATURE_VERSION))
        for clip in clips:
            if clip.feature.shape != (N_MELS, N_FRAMES, 2):
                raise UsageError(f"feature shape {clip.feature.shape} not "
                                 f"({N_MELS}, {N_FRAMES}, 2)")
            dev = clip.device_id.encode("utf-8")
            fh.write(struct.pack("<B", clip.scene_label & 0xFF))
            fh.write(struct.pack("<I", len(dev)))
            fh.write(dev)
            fh.write(np.ascontiguousarray(clip.feature, dtype="<f4").tobytes())


def read_feature_cache(path) -> list[FeatureClip]:
    record = N_MELS * N_FRAMES * 2 * 4
    clips = []
    with open(path, "rb") as fh:
        if fh.read(8) != FEATURE_MAGIC:
            raise IngestionError(f"{path} is not a feature cache (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FEATURE_VERSION:
            raise IngestionError(f"unsupported feature cache version {version}")
        while True:
            head = fh.read(1)
            if not head:
                break
            label = head[0]
            (dlen,) = struct.unpack("<I", fh.read(4))
            dev = fh.read(dlen).decode("utf-8")
            raw = fh.read(record)
            if len(raw) != record:
                raise IngestionError(f"truncated feature record in {path}")
            feature = np.frombuffer(raw, dtype="<f4").reshape(N_MELS, N_FRAMES, 2)
            clips.append(FeatureClip(feature=feature.copy(), scene_label=label,
                                     device_id=dev))
    return clips
