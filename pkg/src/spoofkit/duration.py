"""Fixed/variable duration handling and corpus duration statistics.

Manifests are TSV files with columns ``utt_id  path  label  [duration_s]``;
lines starting with ``#`` are comments. Labels are bonafide, spoof, or
unknown.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, wav_info

log = logging.getLogger(__name__)

LABELS = ("bonafide", "spoof", "unknown")

_HEADER_MISMATCH_S = 0.010


@dataclass(frozen=True)
class ManifestRecord:
    utt_id: str
    path: str
    label: str
    duration_s: float | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(
                f"label for {self.utt_id!r} must be one of {LABELS}, got {self.label!r}"
            )
        if self.duration_s is not None and self.duration_s < 0:
            raise ValueError(
                f"duration_s for {self.utt_id!r} must be >= 0, got {self.duration_s}"
            )


@dataclass
class Manifest:
    """Ordered utterance list with unique ids; paths resolve against base_dir."""

    records: list[ManifestRecord]
    base_dir: Path | None = None

    def __post_init__(self):
        ids = [r.utt_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({u for u in ids if ids.count(u) > 1})
            raise ValueError(f"duplicate utt_ids in manifest: {dupes[:5]}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, record: ManifestRecord) -> Path:
        p = Path(record.path)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        records = []
        for line_no, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) not in (3, 4):
                raise ValueError(
                    f"{path}:{line_no}: expected 'utt_id\\tpath\\tlabel[\\tduration_s]', "
                    f"got {line!r}"
                )
            duration = float(parts[3]) if len(parts) == 4 else None
            records.append(
                ManifestRecord(
                    utt_id=parts[0], path=parts[1], label=parts[2], duration_s=duration
                )
            )
        return cls(records=records, base_dir=path.parent)

    def save(self, path) -> None:
        lines = []
        for r in self.records:
            cols = [r.utt_id, r.path, r.label]
            if r.duration_s is not None:
                cols.append(f"{r.duration_s:.6f}")
            lines.append("\t".join(cols))
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """L x D feature matrix for one utterance."""

    frames: np.ndarray
    utt_id: str

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError(
                f"frames must be a non-empty L x D matrix, got shape {frames.shape}"
            )
        object.__setattr__(self, "frames", frames)


def pad_or_truncate(x: Waveform, target_s: float) -> Waveform:
    """Force a waveform to exactly round(target_s * sample_rate) samples.

    Longer input keeps its first samples; shorter input is tiled end-to-end
    (repeat padding) and cut.
    """
    if target_s <= 0:
        raise ValueError(f"target_s must be positive, got {target_s}")
    if len(x) == 0:
        raise ValueError("cannot pad or truncate an empty waveform")
    target_n = int(round(target_s * x.sample_rate))
    if target_n <= len(x):
        samples = x.samples[:target_n]
    else:
        reps = -(-target_n // len(x))
        samples = np.tile(x.samples, reps)[:target_n]
    return Waveform(samples, x.sample_rate)


def batch_pad(seqs: list[FeatureSequence]) -> tuple[np.ndarray, list[int]]:
    """Stack sequences into (B, L_max, D) with zero rows past each true length."""
    if not seqs:
        raise ValueError("batch must contain at least one sequence")
    dims = {s.frames.shape[1] for s in seqs}
    if len(dims) != 1:
        raise ValueError(f"sequences mix feature dims: {sorted(dims)}")
    lengths = [s.frames.shape[0] for s in seqs]
    l_max = max(lengths)
    batch = np.zeros((len(seqs), l_max, dims.pop()))
    for i, s in enumerate(seqs):
        batch[i, : lengths[i]] = s.frames
    return batch, lengths


@dataclass(frozen=True)
class DurationStats:
    min_s: float
    mean_s: float
    max_s: float
    bin_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)


def duration_stats(manifest: Manifest, bin_width_s: float = 1.0) -> DurationStats:
    """Min/mean/max duration plus a fixed-width histogram over the manifest.

    Durations missing from the manifest are read from the WAV headers. When a
    manifest duration disagrees with its header by more than 10 ms, the
    manifest value is used and a warning is logged.
    """
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    if bin_width_s <= 0:
        raise ValueError(f"bin_width_s must be positive, got {bin_width_s}")
    durations = []
    for r in manifest:
        if r.duration_s is None:
            rate, n = wav_info(manifest.resolve(r))
            durations.append(n / rate)
            continue
        path = manifest.resolve(r)
        if path.is_file():
            rate, n = wav_info(path)
            if abs(n / rate - r.duration_s) > _HEADER_MISMATCH_S:
                log.warning(
                    "%s: manifest duration %.3fs differs from header %.3fs",
                    r.utt_id,
                    r.duration_s,
                    n / rate,
                )
        durations.append(r.duration_s)
    d = np.asarray(durations)
    lo = np.floor(d.min() / bin_width_s) * bin_width_s
    n_bins = int((d.max() - lo) // bin_width_s) + 1
    edges = lo + bin_width_s * np.arange(n_bins + 1)
    counts, _ = np.histogram(d, bins=edges)
    return DurationStats(
        min_s=float(d.min()),
        mean_s=float(d.mean()),
        max_s=float(d.max()),
        bin_edges=edges,
        counts=counts,
    )


def write_histogram_csv(stats: DurationStats, path) -> None:
    """Export the histogram as 'bin_start_s,count' rows for plotting."""
    lines = ["bin_start_s,count"]
    for start, count in zip(stats.bin_edges[:-1], stats.counts):
        lines.append(f"{start:.6g},{int(count)}")
    Path(path).write_text("\n".join(lines) + "\n")
