"""Waveform loading, segmentation and log-mel-spectrogram extraction.

Everything downstream works on 20-second mono segments at 16 kHz
(320000 samples), turned into 128-band log-mel spectrograms with a
1024-point FFT and 512-sample hop. Framing is centered with reflection
padding and a periodic Hann window; mel power is floored at 1e-10 before
the log so silence maps to a finite constant.
"""

from __future__ import annotations

import shutil
import subprocess
import wave
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

SAMPLE_RATE = 16000
SEGMENT_SEC = 20.0
SEGMENT_SAMPLES = int(SEGMENT_SEC * SAMPLE_RATE)  # 320000
N_FFT = 1024
HOP_LENGTH = 512
N_MELS = 128
FMIN = 0.0
FMAX = 8000.0
LOG_EPS = 1e-10


class DecodeError(Exception):
    pass


class EmptyAudio(Exception):
    pass


class SegmentPolicy(Enum):
    RANDOM = "random"
    SLIDE = "slide"
    PAD_SINGLE = "pad_single"


@dataclass
class Waveform:
    samples: np.ndarray  # float32, mono
    sample_rate: int

    @property
    def duration_sec(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class AudioSegment:
    samples: np.ndarray  # float32, exactly SEGMENT_SAMPLES
    start_sec: float

    def __post_init__(self):
        if len(self.samples) != SEGMENT_SAMPLES:
            raise ValueError(
                f"segment must hold {SEGMENT_SAMPLES} samples, got {len(self.samples)}"
            )


@dataclass
class MelSpectrogram:
    values: np.ndarray  # [N_MELS, frames], log power
    frame_hop: int = HOP_LENGTH


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Decode a PCM WAV file to float32 in [-1, 1], shape [frames, channels]."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError, OSError) as exc:
        raise DecodeError(f"cannot decode WAV {path}: {exc}") from exc

    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 4:
        data = np.frombuffer(raw, dtype="<i4").astype(np.float32) / 2147483648.0
    elif width == 1:
        data = (np.frombuffer(raw, dtype=np.uint8).astype(np.float32) - 128.0) / 128.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        as32 = (
            b[:, 0].astype(np.int32)
            | (b[:, 1].astype(np.int32) << 8)
            | (b[:, 2].astype(np.int32) << 16)
        )
        as32 = np.where(as32 >= 1 << 23, as32 - (1 << 24), as32)
        data = as32.astype(np.float32) / float(1 << 23)
    else:
        raise DecodeError(f"unsupported WAV sample width {width} in {path}")
    return data.reshape(-1, n_channels), rate


def write_wav(path: str | Path, samples: np.ndarray, rate: int = SAMPLE_RATE) -> None:
    """Write mono float samples as 16-bit PCM WAV."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = (clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())


def _decode_with_ffmpeg(path: Path) -> tuple[np.ndarray, int]:
    ffmpeg = shutil.which("ffmpeg")
    if ffmpeg is None:
        raise DecodeError(
            f"no decoder for {path.suffix} files (ffmpeg not on PATH); use WAV input"
        )
    cmd = [ffmpeg, "-v", "error", "-i", str(path), "-f", "f32le", "-ac", "1",
           "-ar", str(SAMPLE_RATE), "pipe:1"]
    try:
        out = subprocess.run(cmd, capture_output=True, check=True).stdout
    except subprocess.CalledProcessError as exc:
        raise DecodeError(f"ffmpeg failed on {path}: {exc.stderr.decode()}") from exc
    return np.frombuffer(out, dtype="<f4").reshape(-1, 1), SAMPLE_RATE


def load_and_resample(uri: str | Path, target_rate: int = SAMPLE_RATE) -> Waveform:
    """Load an audio file, average channels to mono, resample to target rate."""
    path = Path(uri)
    if not path.exists():
        raise DecodeError(f"audio file not found: {path}")
    if path.suffix.lower() == ".wav":
        data, rate = read_wav(path)
    else:
        data, rate = _decode_with_ffmpeg(path)
    if data.size == 0:
        raise EmptyAudio(f"audio file has zero samples: {path}")
    mono = data.mean(axis=1)
    if rate != target_rate:
        g = np.gcd(rate, target_rate)
        mono = resample_poly(mono, target_rate // g, rate // g)
    mono = np.ascontiguousarray(mono, dtype=np.float32)
    if not np.all(np.isfinite(mono)):
        raise DecodeError(f"non-finite samples in {path}")
    return Waveform(samples=mono, sample_rate=target_rate)


def _take_padded(samples: np.ndarray, start: int, length: int) -> np.ndarray:
    out = np.zeros(length, dtype=np.float32)
    chunk = samples[start : start + length]
    out[: len(chunk)] = chunk
    return out


def segment(
    waveform: Waveform,
    length_sec: float = SEGMENT_SEC,
    policy: SegmentPolicy = SegmentPolicy.SLIDE,
    rng: np.random.Generator | None = None,
) -> list[AudioSegment]:
    """Cut a waveform into fixed-length segments.

    RANDOM: one uniformly placed crop (training); SLIDE: consecutive
    non-overlapping segments covering the track, last one zero-padded
    (evaluation); PAD_SINGLE: the first segment, zero-padded if short.
    """
    if len(waveform.samples) == 0:
        raise EmptyAudio("cannot segment an empty waveform")
    seg_len = int(round(length_sec * waveform.sample_rate))
    n = len(waveform.samples)

    if policy == SegmentPolicy.RANDOM:
        if rng is None:
            raise ValueError("RANDOM policy needs an RNG")
        start = int(rng.integers(0, max(n - seg_len, 0) + 1))
        return [AudioSegment(_take_padded(waveform.samples, start, seg_len),
                             start / waveform.sample_rate)]
    if policy == SegmentPolicy.SLIDE:
        count = max(1, int(np.ceil(n / seg_len)))
        return [
            AudioSegment(_take_padded(waveform.samples, i * seg_len, seg_len),
                         i * seg_len / waveform.sample_rate)
            for i in range(count)
        ]
    if policy == SegmentPolicy.PAD_SINGLE:
        return [AudioSegment(_take_padded(waveform.samples, 0, seg_len), 0.0)]
    raise ValueError(f"unknown policy {policy}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    rate: int = SAMPLE_RATE,
    fmin: float = FMIN,
    fmax: float = FMAX,
) -> np.ndarray:
    """Triangular mel filterbank, [n_mels, n_fft//2 + 1], peak weight 1."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fft_freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    weights = np.zeros((n_mels, len(fft_freqs)))
    for k in range(n_mels):
        lo, center, hi = edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        weights[k] = np.maximum(0.0, np.minimum(up, down))
    return weights


def mel_center_frequencies(n_mels: int = N_MELS, fmin: float = FMIN,
                           fmax: float = FMAX) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


_mel_weights_cache: dict[tuple, np.ndarray] = {}


def _stft_power(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Power spectrogram with centered frames and reflection padding."""
    pad = n_fft // 2
    x = np.pad(samples.astype(np.float64), pad, mode="reflect")
    n_frames = 1 + (len(samples)) // hop
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft))
    strides = (x.strides[0] * hop, x.strides[0])
    frames = np.lib.stride_tricks.as_strided(
        x, shape=(n_frames, n_fft), strides=strides
    )
    spec = np.fft.rfft(frames * window, axis=1)
    return (spec.real**2 + spec.imag**2).T  # [bins, frames]


def mel_spectrogram(seg: AudioSegment | np.ndarray) -> MelSpectrogram:
    """128-band log-mel spectrogram of one 20 s segment, shape [128, 626]."""
    samples = seg.samples if isinstance(seg, AudioSegment) else np.asarray(seg)
    if len(samples) != SEGMENT_SAMPLES:
        raise ValueError(f"expected {SEGMENT_SAMPLES} samples, got {len(samples)}")
    key = (N_MELS, N_FFT, SAMPLE_RATE, FMIN, FMAX)
    if key not in _mel_weights_cache:
        _mel_weights_cache[key] = mel_filterbank(*key)
    power = _stft_power(samples, N_FFT, HOP_LENGTH)
    mel_power = _mel_weights_cache[key] @ power
    values = np.log(mel_power + LOG_EPS).astype(np.float32)
    return MelSpectrogram(values=values, frame_hop=HOP_LENGTH)
