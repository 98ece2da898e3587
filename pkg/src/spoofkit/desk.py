"""Desk-scale countermeasure: synthetic corpus, subband features, linear classifier.

The classifier is a weighted-cross-entropy logistic regression over per-band
log-energy statistics. It is deliberately small: gradients stay auditable by
finite differences, and a full augmentation-ablation experiment runs on a
laptop CPU, so the effect of band-gap training augmentation can be measured
without a GPU or a challenge dataset.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import DEFAULT_HOP, DEFAULT_N_FFT, Waveform, read_wav, stft, write_wav
from .augment import AugmentPolicy, NoiseBank, apply_steps, check_bank, freqmask
from .duration import Manifest, ManifestRecord, pad_or_truncate
from .metrics import BONAFIDE, SPOOF, ScoreSet

_MODEL_MAGIC = b"SPKDESK"
_MODEL_VERSION = 1

_LOG_EPS = 1e-30


@dataclass(frozen=True)
class FeatureConfig:
    """Subband log-energy statistics: per-band mean and variance over frames.

    When ``fixed_duration_s`` is set, every utterance is truncated or
    repeat-padded to that length before analysis (first window only), so all
    feature vectors summarize the same amount of audio.
    """

    n_bands: int = 16
    f_min: float = 50.0
    floor_db: float = -80.0
    n_fft: int = DEFAULT_N_FFT
    hop_length: int = DEFAULT_HOP
    fixed_duration_s: float | None = 4.0

    def __post_init__(self):
        if self.n_bands < 1:
            raise ValueError(f"n_bands must be >= 1, got {self.n_bands}")
        if self.f_min <= 0:
            raise ValueError(f"f_min must be positive, got {self.f_min}")
        if self.fixed_duration_s is not None and self.fixed_duration_s <= 0:
            raise ValueError(
                f"fixed_duration_s must be positive or None, got {self.fixed_duration_s}"
            )

    @property
    def dim(self) -> int:
        return 2 * self.n_bands

    def band_edges(self, sample_rate: int) -> np.ndarray:
        """Log-spaced band edges from f_min to Nyquist (n_bands + 1 values)."""
        nyquist = sample_rate / 2.0
        if self.f_min >= nyquist:
            raise ValueError(f"f_min {self.f_min} must be below Nyquist {nyquist}")
        return np.logspace(math.log10(self.f_min), math.log10(nyquist), self.n_bands + 1)


def extract_features(x: Waveform, cfg: FeatureConfig) -> np.ndarray:
    """Per-band mean and variance of per-frame log band energy, concatenated."""
    if len(x) < cfg.n_fft:
        raise ValueError(
            f"utterance too short for features: {len(x)} samples < n_fft={cfg.n_fft}"
        )
    if cfg.fixed_duration_s is not None:
        x = pad_or_truncate(x, cfg.fixed_duration_s)
    spec = stft(x, n_fft=cfg.n_fft, hop_length=cfg.hop_length)
    power = spec.bins.real**2 + spec.bins.imag**2
    energy = _band_matrix(cfg, x.sample_rate) @ power
    band_db = np.maximum(10.0 * np.log10(energy + _LOG_EPS), cfg.floor_db)
    return np.concatenate([band_db.mean(axis=1), band_db.var(axis=1)])


def _band_matrix(cfg: FeatureConfig, sample_rate: int) -> np.ndarray:
    """(n_bands, n_bins) 0/1 aggregation matrix; bins below f_min are dropped,
    the top band includes Nyquist."""
    key = (cfg, sample_rate)
    cached = _BAND_MATRIX_CACHE.get(key)
    if cached is not None:
        return cached
    freqs = np.arange(cfg.n_fft // 2 + 1) * (sample_rate / cfg.n_fft)
    edges = cfg.band_edges(sample_rate)
    matrix = np.zeros((cfg.n_bands, len(freqs)))
    for b in range(cfg.n_bands):
        rows = (freqs >= edges[b]) & (freqs < edges[b + 1])
        if b == cfg.n_bands - 1:
            rows = (freqs >= edges[b]) & (freqs <= edges[b + 1])
        matrix[b, rows] = 1.0
    _BAND_MATRIX_CACHE[key] = matrix
    return matrix


_BAND_MATRIX_CACHE: dict = {}


@dataclass(frozen=True)
class TrainConfig:
    """Training recipe: halving learning-rate schedule and 10:1 class weighting."""

    lr0: float = 5e-4
    epochs: int = 20
    lr_halving_period: int = 2
    weight_bonafide: float = 10.0
    weight_spoof: float = 1.0
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.weight_bonafide <= 0 or self.weight_spoof <= 0:
            raise ValueError("class weights must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.lr_halving_period < 1:
            raise ValueError("epochs, batch_size, lr_halving_period must be >= 1")


def lr_schedule(cfg: TrainConfig, epoch: int) -> float:
    """lr0 * 0.5 ** floor(epoch / halving_period), epochs counted from 0."""
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_halving_period)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def weighted_ce_loss_and_grad(
    w: np.ndarray,
    b: float,
    features: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
):
    """Mean weighted logistic cross-entropy over a batch, with its gradient.

    targets are 1 for bona fide (weight_bonafide) and 0 for spoof
    (weight_spoof). Returns (loss, grad_w, grad_b).
    """
    z = features @ w + b
    sw = np.where(targets == 1, cfg.weight_bonafide, cfg.weight_spoof)
    loss = float(np.mean(sw * (np.logaddexp(0.0, z) - targets * z)))
    delta = sw * (_sigmoid(z) - targets) / len(targets)
    return loss, features.T @ delta, float(delta.sum())


@dataclass
class DeskModel:
    """Linear scorer: score(x) = w . features(x) + b, read as a bona fide LLR."""

    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError(f"weights must be a vector, got shape {w.shape}")
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        self.weights = w

    @property
    def dim(self) -> int:
        return len(self.weights)

    def score(self, features: np.ndarray) -> float:
        features = np.asarray(features, dtype=np.float64)
        if features.shape != self.weights.shape:
            raise ValueError(
                f"feature dim {features.shape} does not match model dim "
                f"{self.weights.shape}"
            )
        return float(features @ self.weights + self.bias)

    def save(self, path) -> None:
        payload = struct.pack("<7sBI", _MODEL_MAGIC, _MODEL_VERSION, self.dim)
        payload += self.weights.astype("<f8").tobytes()
        payload += struct.pack("<d", self.bias)
        Path(path).write_bytes(payload)

    @classmethod
    def load(cls, path) -> "DeskModel":
        buf = Path(path).read_bytes()
        if len(buf) < 12 or buf[:7] != _MODEL_MAGIC:
            raise ValueError(f"{path}: not a desk model file (bad magic)")
        version, dim = struct.unpack_from("<BI", buf, 7)
        if version != _MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        expected = 12 + 8 * dim + 8
        if len(buf) != expected:
            raise ValueError(f"{path}: truncated model file ({len(buf)} != {expected})")
        weights = np.frombuffer(buf, dtype="<f8", count=dim, offset=12).copy()
        (bias,) = struct.unpack_from("<d", buf, 12 + 8 * dim)
        return cls(weights=weights, bias=bias)


def synth_corpus(
    out_dir,
    n_per_class: int,
    seed: int,
    sample_rate: int = 16000,
) -> Manifest:
    """Generate a labeled synthetic corpus of WAV files plus its manifest.

    Bona fide utterances are a few harmonics of a random F0 over 1/f-shaped
    noise, full band. Spoof utterances add a narrowband high-frequency tone
    (5-7.5 kHz at -20 dBFS), a stand-in for the high-band artifacts of
    synthetic speech. Durations are uniform in [2, 12] s. Deterministic per
    seed; the manifest is also written to <out_dir>/manifest.tsv.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    records = []
    for label in (BONAFIDE, SPOOF):
        for i in range(n_per_class):
            x = _synth_utterance(rng, sample_rate, spoof=label == SPOOF)
            name = f"{label}_{i:04d}.wav"
            write_wav(out_dir / name, x)
            records.append(
                ManifestRecord(
                    utt_id=f"{label}_{i:04d}",
                    path=name,
                    label=label,
                    duration_s=len(x) / sample_rate,
                )
            )
    manifest = Manifest(records=records, base_dir=out_dir)
    manifest.save(out_dir / "manifest.tsv")
    return manifest


# Besides the dominant high tone, spoof noise floors are very slightly
# elevated in the harmonic-free 1.7-3 kHz zone. The tone dies with the band
# gap; this faint mid-band artifact survives every gap threshold, like the
# in-band artifacts synthesis leaves in real deepfakes.
_SPOOF_MIDBAND_DB = 0.1
_SPOOF_MIDBAND_HZ = (1700.0, 3000.0)


def _synth_utterance(rng: np.random.Generator, sample_rate: int, spoof: bool) -> Waveform:
    duration = rng.uniform(2.0, 12.0)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(80.0, 300.0)
    n_harmonics = int(rng.integers(3, 6))
    sig = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        sig += (1.0 / h) * np.sin(2.0 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    sig *= 0.5 / np.max(np.abs(sig))
    # 1/f-shaped noise keeps every band alive up to Nyquist
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spectrum /= np.sqrt(np.maximum(freqs, 20.0))
    if spoof:
        lo, hi = _SPOOF_MIDBAND_HZ
        spectrum[(freqs >= lo) & (freqs < hi)] *= 10.0 ** (_SPOOF_MIDBAND_DB / 20.0)
    noise = np.fft.irfft(spectrum, n)
    noise *= 0.02 / math.sqrt(np.mean(noise**2))
    sig = sig + noise
    if spoof:
        tone_freq = rng.uniform(5000.0, 7500.0)
        sig = sig + 0.1 * np.sin(2.0 * np.pi * tone_freq * t + rng.uniform(0, 2 * np.pi))
    return Waveform(sig, sample_rate)


def gap_corpus(
    manifest: Manifest,
    out_dir,
    seed: int,
    thresholds=(4000.0, 5000.0, 6000.0, 7000.0),
) -> Manifest:
    """Freqmask every file of a corpus (random threshold per file) into out_dir.

    This mimics evaluation material whose high band was destroyed downstream.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    records = []
    for r in manifest:
        x = read_wav(manifest.resolve(r))
        y = freqmask(x, thresholds, rng)
        name = Path(r.path).name
        write_wav(out_dir / name, y)
        records.append(
            ManifestRecord(
                utt_id=r.utt_id,
                path=name,
                label=r.label,
                duration_s=len(y) / x.sample_rate,
            )
        )
    gapped = Manifest(records=records, base_dir=out_dir)
    gapped.save(out_dir / "manifest.tsv")
    return gapped


def _load_targets(manifest: Manifest) -> np.ndarray:
    labels = [r.label for r in manifest]
    known = {BONAFIDE, SPOOF}
    unknown = sorted(set(labels) - known)
    if unknown:
        raise ValueError(f"training manifest has unlabeled records: {unknown}")
    targets = np.array([1.0 if lab == BONAFIDE else 0.0 for lab in labels])
    if targets.min() == targets.max():
        raise ValueError("training manifest must contain both classes")
    return targets


def train(
    manifest: Manifest,
    policy: AugmentPolicy,
    fcfg: FeatureConfig,
    tcfg: TrainConfig,
    bank: NoiseBank | None = None,
    base_features: np.ndarray | None = None,
) -> DeskModel:
    """Mini-batch gradient descent on weighted cross-entropy.

    The augmentation policy is re-drawn for every utterance every epoch
    (stream id = (epoch, utterance index)), the learning rate halves every
    ``lr_halving_period`` epochs, and the epoch-end snapshot with the lowest
    full-training-set loss is returned. Deterministic given the seeds.

    ``base_features`` may carry precomputed ``extract_features`` rows for the
    un-augmented manifest (same order) to avoid recomputing them across runs.
    """
    targets = _load_targets(manifest)
    check_bank(policy, bank)
    if base_features is not None:
        base_feats = np.asarray(base_features, dtype=np.float64)
        if base_feats.shape != (len(manifest), fcfg.dim):
            raise ValueError(
                f"base_features shape {base_feats.shape} does not match "
                f"({len(manifest)}, {fcfg.dim})"
            )
    else:
        base_feats = np.stack(
            [
                extract_features(read_wav(manifest.resolve(r)), fcfg)
                for r in manifest
            ]
        )
    n = len(manifest)
    # standardize on the un-augmented corpus; folded back into (w, b) at the
    # end, so the returned model scores raw features. The dispersion floor
    # keeps nearly-constant dB dimensions from getting huge leverage.
    mu = base_feats.mean(axis=0)
    sigma = np.maximum(base_feats.std(axis=0), 1.0)
    base_std = (base_feats - mu) / sigma
    w = np.zeros(fcfg.dim)
    b = 0.0
    rng = np.random.default_rng(tcfg.seed & 0xFFFFFFFFFFFFFFFF)
    best_loss = math.inf
    best = (w.copy(), b)
    for epoch in range(tcfg.epochs):
        lr = lr_schedule(tcfg, epoch)
        feats = base_std
        plans = [policy.draw_plan((epoch, i)) for i in range(n)]
        if any(plans):
            feats = base_std.copy()
            for i, plan in enumerate(plans):
                if not plan:
                    continue
                x = read_wav(manifest.resolve(manifest.records[i]))
                if fcfg.fixed_duration_s is not None:
                    # augment the fixed-length view the features will see
                    x = pad_or_truncate(x, fcfg.fixed_duration_s)
                x = apply_steps(x, policy, plan, stream=(epoch, i), bank=bank)
                feats[i] = (extract_features(x, fcfg) - mu) / sigma
        order = rng.permutation(n)
        for start in range(0, n, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            _, gw, gb = weighted_ce_loss_and_grad(w, b, feats[idx], targets[idx], tcfg)
            w -= lr * gw
            b -= lr * gb
        epoch_loss, _, _ = weighted_ce_loss_and_grad(w, b, feats, targets, tcfg)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best = (w.copy(), b)
    w_raw = best[0] / sigma
    return DeskModel(weights=w_raw, bias=best[1] - float(w_raw @ mu))


def score_trials(model: DeskModel, manifest: Manifest, fcfg: FeatureConfig) -> ScoreSet:
    """One bona fide logit per manifest record, higher = more bona fide."""
    if model.dim != fcfg.dim:
        raise ValueError(
            f"model dim {model.dim} does not match feature config dim {fcfg.dim}"
        )
    utt_ids = []
    scores = []
    for r in manifest:
        feats = extract_features(read_wav(manifest.resolve(r)), fcfg)
        utt_ids.append(r.utt_id)
        scores.append(model.score(feats))
    return ScoreSet(utt_ids=tuple(utt_ids), scores=np.array(scores))
