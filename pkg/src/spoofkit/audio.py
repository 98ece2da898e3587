"""Time/frequency-domain primitives: waveforms, windowed STFT/ISTFT, WAV I/O.

Everything operates on mono float64 audio in the nominal range [-1, 1].
All functions are pure; waveforms and spectrograms are treated as immutable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ReconstructionError, WavFormatError

DEFAULT_N_FFT = 1024
DEFAULT_HOP = 256
DEFAULT_WINDOW = "hann"

_PCM16_SCALE = 32768.0
_ENVELOPE_EPS = 1e-10


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio: a 1-D sample array plus its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        rate = int(self.sample_rate)
        if rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """One-sided complex STFT matrix of shape (n_fft // 2 + 1, n_frames).

    ``n_samples`` records the pre-padding length of the signal the matrix was
    computed from, so the inverse transform can restore the exact length.
    """

    bins: np.ndarray
    n_fft: int
    hop_length: int
    window: str
    sample_rate: int
    n_samples: int | None = None

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        _check_fft_params(self.n_fft, self.hop_length)
        if bins.ndim != 2 or bins.shape[0] != self.n_fft // 2 + 1:
            raise ValueError(
                f"bins must have {self.n_fft // 2 + 1} rows for n_fft={self.n_fft}, "
                f"got shape {bins.shape}"
            )
        object.__setattr__(self, "bins", bins)

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]


def _check_fft_params(n_fft: int, hop_length: int) -> None:
    if n_fft < 2 or (n_fft & (n_fft - 1)) != 0:
        raise ValueError(f"n_fft must be a power of two >= 2, got {n_fft}")
    if not 1 <= hop_length <= n_fft:
        raise ValueError(f"hop_length must be in [1, n_fft], got {hop_length}")


def get_window(name: str, n_fft: int) -> np.ndarray:
    """Return a periodic analysis window of length n_fft."""
    n = np.arange(n_fft)
    if name == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / n_fft)
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / n_fft)
    if name == "rect":
        return np.ones(n_fft)
    raise ValueError(f"unknown window {name!r} (expected hann, hamming, or rect)")


def stft(
    x: Waveform,
    n_fft: int = DEFAULT_N_FFT,
    hop_length: int | None = None,
    window: str = DEFAULT_WINDOW,
) -> Spectrogram:
    """Short-time Fourier transform with centered, reflection-padded frames.

    Frames are spaced ``hop_length`` samples apart (default n_fft // 4), each
    windowed and transformed to one column of a one-sided spectrum. A signal
    of length L yields floor(L / hop) + 1 frames.
    """
    if hop_length is None:
        hop_length = n_fft // 4
    _check_fft_params(n_fft, hop_length)
    n = len(x)
    if n < n_fft:
        raise ValueError(f"signal too short for STFT: {n} samples < n_fft={n_fft}")
    win = get_window(window, n_fft)
    pad = n_fft // 2
    padded = np.pad(x.samples, pad, mode="reflect")
    n_frames = n // hop_length + 1
    view = np.lib.stride_tricks.sliding_window_view(padded, n_fft)
    frames = view[:: hop_length][:n_frames] * win
    bins = np.fft.rfft(frames, axis=1).T
    return Spectrogram(
        bins=bins,
        n_fft=n_fft,
        hop_length=hop_length,
        window=window,
        sample_rate=x.sample_rate,
        n_samples=n,
    )


def istft(spec: Spectrogram, length: int | None = None) -> Waveform:
    """Inverse STFT by overlap-add with window-square normalization.

    Output length is ``length`` if given, else the recorded pre-padding
    length, else (n_frames - 1) * hop. Raises ReconstructionError where the
    squared-window envelope is degenerate over the kept samples.
    """
    n_fft, hop = spec.n_fft, spec.hop_length
    win = get_window(spec.window, n_fft)
    frames = np.fft.irfft(spec.bins.T, n=n_fft, axis=1) * win[None, :]
    n_frames = spec.n_frames
    total = n_fft + (n_frames - 1) * hop
    out = np.zeros(total)
    envelope = np.zeros(total)
    win_sq = win * win
    for m in range(n_frames):
        start = m * hop
        out[start : start + n_fft] += frames[m]
        envelope[start : start + n_fft] += win_sq
    if length is None:
        length = spec.n_samples if spec.n_samples is not None else total - n_fft
    pad = n_fft // 2
    avail = min(length, total - pad)
    kept_env = envelope[pad : pad + avail]
    if np.any(kept_env < _ENVELOPE_EPS):
        raise ReconstructionError(
            f"window-square envelope below {_ENVELOPE_EPS} inside the output "
            f"region (window={spec.window!r}, hop={hop}, n_fft={n_fft})"
        )
    samples = out[pad : pad + avail] / kept_env
    if avail < length:
        samples = np.pad(samples, (0, length - avail))
    return Waveform(samples=samples, sample_rate=spec.sample_rate)


def fft_frequencies(sample_rate: int, n_fft: int) -> np.ndarray:
    """Center frequencies of the one-sided FFT bins: k * sample_rate / n_fft."""
    if n_fft < 2 or (n_fft & (n_fft - 1)) != 0:
        raise ValueError(f"n_fft must be a power of two >= 2, got {n_fft}")
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be positive, got {sample_rate}")
    return np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)


def _parse_wav_chunks(buf: bytes, path):
    """Walk RIFF chunks; return (fmt fields, data offset, data size)."""
    if len(buf) < 12:
        raise WavFormatError(f"{path}: file too short for a RIFF header")
    if buf[0:4] != b"RIFF":
        raise WavFormatError(f"{path}: bad chunk id {buf[0:4]!r}, expected b'RIFF'")
    if buf[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: RIFF form type is {buf[8:12]!r}, expected b'WAVE'")
    fmt = None
    data_span = None
    offset = 12
    while offset + 8 <= len(buf):
        chunk_id = buf[offset : offset + 4]
        (chunk_size,) = struct.unpack_from("<I", buf, offset + 4)
        body = offset + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise WavFormatError(f"{path}: fmt chunk size {chunk_size} < 16")
            fmt = struct.unpack_from("<HHIIHH", buf, body)
        elif chunk_id == b"data":
            if body + chunk_size > len(buf):
                raise WavFormatError(
                    f"{path}: data chunk size {chunk_size} exceeds file length"
                )
            data_span = (body, chunk_size)
        offset = body + chunk_size + (chunk_size & 1)
    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if data_span is None:
        raise WavFormatError(f"{path}: missing data chunk")
    audio_format, n_channels, sample_rate, _byte_rate, block_align, bits = fmt
    if audio_format != 1:
        raise WavFormatError(
            f"{path}: unsupported audio format code {audio_format} (PCM=1 required)"
        )
    if bits != 16:
        raise WavFormatError(f"{path}: unsupported bits_per_sample {bits} (16 required)")
    if n_channels < 1:
        raise WavFormatError(f"{path}: invalid channel count {n_channels}")
    if block_align != 2 * n_channels:
        raise WavFormatError(
            f"{path}: block_align {block_align} inconsistent with "
            f"{n_channels} 16-bit channels"
        )
    if data_span[1] == 0:
        raise WavFormatError(f"{path}: zero-length data chunk")
    if data_span[1] % block_align != 0:
        raise WavFormatError(
            f"{path}: data chunk size {data_span[1]} is not a multiple of "
            f"block_align {block_align}"
        )
    return n_channels, sample_rate, data_span


def read_wav(path) -> Waveform:
    """Read a PCM16 RIFF/WAVE file; multi-channel input is downmixed by channel mean.

    Samples are scaled to [-1, 1) by 1/32768.
    """
    buf = Path(path).read_bytes()
    n_channels, sample_rate, (start, size) = _parse_wav_chunks(buf, path)
    raw = np.frombuffer(buf, dtype="<i2", count=size // 2, offset=start)
    samples = raw.astype(np.float64)
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return Waveform(samples=samples / _PCM16_SCALE, sample_rate=sample_rate)


def wav_info(path) -> tuple[int, int]:
    """Return (sample_rate, n_frames) from a WAV header without decoding samples."""
    buf = Path(path).read_bytes()
    n_channels, sample_rate, (_start, size) = _parse_wav_chunks(buf, path)
    return sample_rate, size // (2 * n_channels)


def write_wav(path, x: Waveform) -> None:
    """Write mono PCM16 RIFF/WAVE; samples scaled by 32768, rounded and clamped."""
    ints = np.clip(np.rint(x.samples * _PCM16_SCALE), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        x.sample_rate,
        x.sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    Path(path).write_bytes(header + payload)
