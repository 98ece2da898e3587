"""Waveform-domain data augmentation and a seeded probabilistic policy engine.

The centerpiece is :func:`freqmask`, which zeroes every STFT row above a
randomly chosen cutoff so that training audio mimics material whose high
band was destroyed by codec or resampling chains. The remaining operators
cover additive noise, room-impulse-response convolution, Butterworth
filtering, and phase-vocoder time/pitch manipulation.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .audio import (
    DEFAULT_HOP,
    DEFAULT_N_FFT,
    DEFAULT_WINDOW,
    Waveform,
    fft_frequencies,
    istft,
    read_wav,
    stft,
)
from .errors import ConfigError

DEFAULT_FREQMASK_THRESHOLDS = (4000.0, 5000.0, 6000.0, 7000.0)
DEFAULT_SNR_RANGE_DB = (5.0, 20.0)

BANK_CATEGORIES = ("noise", "music", "rir")

# Stream index reserved for the policy's application coin flips; step rngs use
# their step index, which stays far below this.
_GATE_INDEX = 2**32 - 1


def freqmask(
    x: Waveform,
    thresholds: Sequence[float] = DEFAULT_FREQMASK_THRESHOLDS,
    rng: np.random.Generator | None = None,
    n_fft: int = DEFAULT_N_FFT,
    hop_length: int = DEFAULT_HOP,
    window: str = DEFAULT_WINDOW,
) -> Waveform:
    """Zero all STFT rows whose center frequency exceeds a random cutoff.

    The cutoff is drawn uniformly from ``thresholds``; rows strictly above it
    are set to complex zero and the signal is resynthesized at its original
    length. The bin exactly at the cutoff frequency is kept.
    """
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    if x.sample_rate < 2 * max(thresholds):
        raise ValueError(
            f"sample rate {x.sample_rate} is below 2x the largest threshold "
            f"{max(thresholds)}"
        )
    if rng is None:
        rng = np.random.default_rng()
    cutoff = thresholds[int(rng.integers(len(thresholds)))]
    spec = stft(x, n_fft=n_fft, hop_length=hop_length, window=window)
    freqs = fft_frequencies(x.sample_rate, n_fft)
    bins = spec.bins.copy()
    bins[freqs > cutoff, :] = 0.0
    return istft(dataclasses.replace(spec, bins=bins))


def _butter2_coeffs(cutoff: float, sample_rate: int, kind: str):
    """Second-order Butterworth biquad (RBJ bilinear transform, Q = 1/sqrt(2))."""
    if not 0 < cutoff < sample_rate / 2:
        raise ValueError(
            f"cutoff must lie in (0, Nyquist={sample_rate / 2}), got {cutoff}"
        )
    w0 = 2.0 * math.pi * cutoff / sample_rate
    c = math.cos(w0)
    alpha = math.sin(w0) / math.sqrt(2.0)
    if kind == "low":
        b = np.array([(1 - c) / 2, 1 - c, (1 - c) / 2])
    else:
        b = np.array([(1 + c) / 2, -(1 + c), (1 + c) / 2])
    a = np.array([1 + alpha, -2 * c, 1 - alpha])
    return b / a[0], a / a[0]


def _biquad(samples: np.ndarray, b: np.ndarray, a: np.ndarray) -> np.ndarray:
    # direct form II transposed, zero initial state, single causal pass
    b0, b1, b2 = b
    a1, a2 = a[1], a[2]
    out = np.empty_like(samples)
    z1 = z2 = 0.0
    for i, xi in enumerate(samples):
        yi = b0 * xi + z1
        z1 = b1 * xi - a1 * yi + z2
        z2 = b2 * xi - a2 * yi
        out[i] = yi
    return out


def low_pass(x: Waveform, cutoff: float) -> Waveform:
    """Second-order Butterworth low-pass, single causal pass, -3 dB at cutoff."""
    b, a = _butter2_coeffs(cutoff, x.sample_rate, "low")
    return Waveform(_biquad(x.samples, b, a), x.sample_rate)


def high_pass(x: Waveform, cutoff: float) -> Waveform:
    """Second-order Butterworth high-pass, single causal pass, -3 dB at cutoff."""
    b, a = _butter2_coeffs(cutoff, x.sample_rate, "high")
    return Waveform(_biquad(x.samples, b, a), x.sample_rate)


def biquad_response_db(b: np.ndarray, a: np.ndarray, freq: float, sample_rate: int) -> float:
    """Magnitude response of a biquad in dB at one frequency."""
    w = 2.0 * math.pi * freq / sample_rate
    z = np.exp(-1j * w * np.arange(3))
    h = np.dot(b, z) / np.dot(a, z)
    return 20.0 * math.log10(abs(h))


def add_noise(x: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Mix looped/truncated noise into x at the requested SNR.

    The mixture is rescaled as a whole only if it would clip beyond [-1, 1].
    """
    if noise.sample_rate != x.sample_rate:
        raise ValueError(
            f"sample rate mismatch: signal {x.sample_rate} vs noise {noise.sample_rate}"
        )
    if len(noise) < 1:
        raise ValueError("noise must be non-empty")
    p_signal = np.mean(x.samples**2)
    if p_signal == 0.0:
        raise ValueError("cannot set an SNR against a silent input signal")
    reps = -(-len(x) // len(noise))
    n = np.tile(noise.samples, reps)[: len(x)]
    p_noise = np.mean(n**2)
    if p_noise == 0.0:
        raise ValueError("noise segment has zero power, cannot scale to an SNR")
    scale = math.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    mix = x.samples + scale * n
    peak = np.max(np.abs(mix))
    if peak > 1.0:
        mix = mix / peak
    return Waveform(mix, x.sample_rate)


def convolve_rir(x: Waveform, rir: Waveform) -> Waveform:
    """Full linear convolution with a room impulse response, truncated to len(x)
    and rescaled to the input RMS."""
    if rir.sample_rate != x.sample_rate:
        raise ValueError(
            f"sample rate mismatch: signal {x.sample_rate} vs rir {rir.sample_rate}"
        )
    if len(rir) < 1:
        raise ValueError("rir must be non-empty")
    if not np.any(rir.samples):
        raise ValueError("rir is all zeros")
    full = len(x) + len(rir) - 1
    size = 1 << (full - 1).bit_length()
    out = np.fft.irfft(
        np.fft.rfft(x.samples, size) * np.fft.rfft(rir.samples, size), size
    )[: len(x)]
    rms_in = math.sqrt(np.mean(x.samples**2))
    rms_out = math.sqrt(np.mean(out**2))
    if rms_out > 0.0:
        out = out * (rms_in / rms_out)
    return Waveform(out, x.sample_rate)


def time_stretch(
    x: Waveform,
    rate: float,
    n_fft: int = DEFAULT_N_FFT,
    hop_length: int = DEFAULT_HOP,
    window: str = DEFAULT_WINDOW,
) -> Waveform:
    """Phase-vocoder time stretch: output length round(len / rate), pitch kept."""
    if not 0.5 <= rate <= 2.0:
        raise ValueError(f"rate must be in [0.5, 2.0], got {rate}")
    spec = stft(x, n_fft=n_fft, hop_length=hop_length, window=window)
    n_bins, n_frames = spec.bins.shape
    steps = np.arange(0.0, n_frames, rate)
    # one guard column so interpolation can always look one frame ahead
    padded = np.concatenate([spec.bins, np.zeros((n_bins, 2), dtype=complex)], axis=1)
    mags = np.abs(padded)
    phases = np.angle(padded)
    advance = 2.0 * np.pi * hop_length * np.arange(n_bins) / n_fft
    out = np.empty((n_bins, len(steps)), dtype=complex)
    acc = phases[:, 0].copy()
    for i, t in enumerate(steps):
        t0 = int(t)
        frac = t - t0
        mag = (1.0 - frac) * mags[:, t0] + frac * mags[:, t0 + 1]
        out[:, i] = mag * np.exp(1j * acc)
        dphi = phases[:, t0 + 1] - phases[:, t0] - advance
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        acc += advance + dphi
    target = int(round(len(x) / rate))
    return istft(dataclasses.replace(spec, bins=out), length=target)


def pitch_shift(x: Waveform, semitones: float) -> Waveform:
    """Shift pitch by a number of semitones, preserving duration.

    Implemented as a phase-vocoder stretch followed by linear resampling back
    to the original length, so the dominant frequency scales by
    2**(semitones / 12).
    """
    if not -12.0 <= semitones <= 12.0:
        raise ValueError(f"semitones must be in [-12, 12], got {semitones}")
    factor = 2.0 ** (semitones / 12.0)
    stretched = time_stretch(x, 1.0 / factor)
    m = len(stretched)
    positions = np.arange(len(x)) * (m / len(x))
    resampled = np.interp(positions, np.arange(m), stretched.samples)
    return Waveform(resampled, x.sample_rate)


class NoiseBank:
    """Waveform pool for additive-noise and reverberation augmentation.

    Entries carry a category tag: ``noise`` and ``music`` feed
    :func:`add_noise`, ``rir`` feeds :func:`convolve_rir`. A bank manifest is
    a text file with one ``<path>\\t<category>`` line per entry.
    """

    def __init__(self, entries: Sequence[tuple[Waveform, str]]):
        rates = {w.sample_rate for w, _ in entries}
        if len(rates) > 1:
            raise ValueError(f"bank entries mix sample rates: {sorted(rates)}")
        for _, category in entries:
            if category not in BANK_CATEGORIES:
                raise ConfigError(
                    f"unknown bank category {category!r}, expected one of {BANK_CATEGORIES}"
                )
        self._by_category: dict[str, list[Waveform]] = {c: [] for c in BANK_CATEGORIES}
        for w, category in entries:
            self._by_category[category].append(w)

    @classmethod
    def from_manifest(cls, path) -> "NoiseBank":
        base = Path(path).parent
        entries = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(
                    f"{path}:{line_no}: expected '<path>\\t<category>', got {line!r}"
                )
            wav_path, category = parts
            p = Path(wav_path)
            if not p.is_absolute():
                p = base / p
            entries.append((read_wav(p), category.strip()))
        return cls(entries)

    def count(self, category: str) -> int:
        return len(self._by_category.get(category, []))

    def sample(self, category: str, rng: np.random.Generator) -> Waveform:
        pool = self._by_category.get(category)
        if not pool:
            raise ConfigError(f"noise bank has no entries in category {category!r}")
        return pool[int(rng.integers(len(pool)))]


@dataclass(frozen=True)
class PolicyStep:
    """One augmentation operator plus its independent application probability."""

    op: str
    probability: float
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.op not in _STEP_OPS:
            raise ConfigError(f"unknown augmentation op {self.op!r}, expected one of "
                              f"{sorted(_STEP_OPS)}")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError(
                f"probability must be in [0, 1], got {self.probability} for {self.op!r}"
            )
        object.__setattr__(self, "params", dict(self.params))


@dataclass(frozen=True)
class AugmentPolicy:
    """Ordered augmentation steps with a seed controlling every random choice.

    Identical (policy, seed, input, stream) always produce bit-identical
    output. Concurrent workers should pass distinct ``stream`` ids (e.g. the
    utterance index) to :func:`apply_policy`.
    """

    steps: tuple[PolicyStep, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def step_rng(self, stream, index: int) -> np.random.Generator:
        """Deterministic generator for one step of one stream."""
        return np.random.default_rng(list(_stream_key(self.seed, stream)) + [index])

    def required_categories(self) -> set[str]:
        need = set()
        for step in self.steps:
            if step.probability > 0 and step.op in ("noise", "music", "rir"):
                need.add(step.op)
        return need

    def draw_plan(self, stream) -> list[int]:
        """Indices of the steps that fire for this stream (the coin flips)."""
        gate = self.step_rng(stream, _GATE_INDEX)
        return [
            i
            for i, step in enumerate(self.steps)
            if gate.uniform() < step.probability
        ]


def _stream_key(seed: int, stream) -> tuple[int, ...]:
    parts = (stream,) if isinstance(stream, int) else tuple(stream)
    return (seed & 0xFFFFFFFFFFFFFFFF,) + tuple(p & 0xFFFFFFFFFFFFFFFF for p in parts)


def _draw(value, rng: np.random.Generator) -> float:
    """A scalar parameter is fixed; a [lo, hi] pair is drawn uniformly."""
    if isinstance(value, (list, tuple)):
        lo, hi = value
        return float(rng.uniform(lo, hi))
    return float(value)


def _apply_step(
    x: Waveform, step: PolicyStep, rng: np.random.Generator, bank: NoiseBank | None
) -> Waveform:
    params = step.params
    if step.op == "freqmask":
        return freqmask(
            x, params.get("thresholds", DEFAULT_FREQMASK_THRESHOLDS), rng
        )
    if step.op == "lowpass":
        return low_pass(x, _draw(params["cutoff"], rng))
    if step.op == "highpass":
        return high_pass(x, _draw(params["cutoff"], rng))
    if step.op in ("noise", "music"):
        snr = _draw(params.get("snr_db", DEFAULT_SNR_RANGE_DB), rng)
        return add_noise(x, bank.sample(step.op, rng), snr)
    if step.op == "rir":
        return convolve_rir(x, bank.sample("rir", rng))
    if step.op == "time_stretch":
        return time_stretch(x, _draw(params["rate"], rng))
    if step.op == "pitch_shift":
        return pitch_shift(x, _draw(params["semitones"], rng))
    raise ConfigError(f"unknown augmentation op {step.op!r}")


_STEP_OPS = {
    "freqmask",
    "lowpass",
    "highpass",
    "noise",
    "music",
    "rir",
    "time_stretch",
    "pitch_shift",
}


def check_bank(policy: AugmentPolicy, bank: NoiseBank | None) -> None:
    """Fail early if the policy references a missing or empty bank category."""
    for category in sorted(policy.required_categories()):
        if bank is None or bank.count(category) == 0:
            raise ConfigError(
                f"policy needs bank category {category!r} but the bank is missing "
                "or empty"
            )


def apply_steps(
    x: Waveform,
    policy: AugmentPolicy,
    indices,
    stream=0,
    bank: NoiseBank | None = None,
) -> Waveform:
    """Apply the listed policy steps (already decided) in order."""
    out = x
    for i in sorted(indices):
        step = policy.steps[i]
        out = _apply_step(out, step, policy.step_rng(stream, i), bank)
    return out


def apply_policy(
    x: Waveform,
    policy: AugmentPolicy,
    bank: NoiseBank | None = None,
    stream=0,
) -> Waveform:
    """Run the policy's steps in order, each with its own probability."""
    check_bank(policy, bank)
    return apply_steps(x, policy, policy.draw_plan(stream), stream, bank)


def load_policy(path) -> AugmentPolicy:
    """Read a policy from JSON: {"seed": int, "steps": [{"op", "probability", "params"}]}."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return policy_from_dict(doc, source=str(path))


def policy_from_dict(doc: Mapping[str, Any], source: str = "policy") -> AugmentPolicy:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{source}: policy document must be an object")
    unknown = set(doc) - {"seed", "steps"}
    if unknown:
        raise ConfigError(f"{source}: unknown policy keys {sorted(unknown)}")
    steps = []
    for i, raw in enumerate(doc.get("steps", [])):
        extra = set(raw) - {"op", "probability", "params"}
        if extra:
            raise ConfigError(f"{source}: step {i} has unknown keys {sorted(extra)}")
        if "op" not in raw or "probability" not in raw:
            raise ConfigError(f"{source}: step {i} needs 'op' and 'probability'")
        steps.append(
            PolicyStep(
                op=raw["op"],
                probability=float(raw["probability"]),
                params=raw.get("params", {}),
            )
        )
    return AugmentPolicy(steps=tuple(steps), seed=int(doc.get("seed", 0)))
