"""Detection metrics for bona fide vs spoof scoring: EER, minDCF, actDCF, Cllr.

Scores follow the convention higher = more bona fide. actDCF and Cllr
additionally interpret scores as natural-log likelihood ratios.

Tie handling is fixed throughout: a trial whose score equals the threshold is
accepted as bona fide, i.e. Pmiss(t) counts bona fide scores < t and Pfa(t)
counts spoof scores >= t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

BONAFIDE = "bonafide"
SPOOF = "spoof"


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Per-trial detection scores, one (utt_id, score) pair per trial."""

    utt_ids: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        ids = tuple(self.utt_ids)
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1 or len(ids) != len(scores):
            raise ValueError(
                f"need one score per utt_id, got {len(ids)} ids and shape {scores.shape}"
            )
        if len(set(ids)) != len(ids):
            dupes = sorted({u for u in ids if ids.count(u) > 1})
            raise ValueError(f"duplicate utt_ids: {dupes[:5]}")
        if not np.all(np.isfinite(scores)):
            bad = [ids[i] for i in np.where(~np.isfinite(scores))[0][:5]]
            raise ValueError(f"non-finite scores for utt_ids {bad}")
        object.__setattr__(self, "utt_ids", ids)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return len(self.utt_ids)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.utt_ids, self.scores.tolist()))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, float]]) -> "ScoreSet":
        pairs = list(pairs)
        return cls(
            utt_ids=tuple(u for u, _ in pairs),
            scores=np.array([s for _, s in pairs], dtype=np.float64),
        )


class TrialLabels:
    """Ground-truth labels, utt_id -> 'bonafide' | 'spoof'."""

    def __init__(self, labels: Mapping[str, str]):
        for utt, label in labels.items():
            if label not in (BONAFIDE, SPOOF):
                raise ValueError(
                    f"label for {utt!r} must be '{BONAFIDE}' or '{SPOOF}', got {label!r}"
                )
        self._labels = dict(labels)

    def __getitem__(self, utt_id: str) -> str:
        return self._labels[utt_id]

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._labels

    def __len__(self):
        return len(self._labels)

    def items(self):
        return self._labels.items()


@dataclass(frozen=True)
class DcfConfig:
    """Detection cost parameters; the normalizer is min(c_miss*p, c_fa*(1-p))."""

    p_target: float
    c_miss: float
    c_fa: float

    def __post_init__(self):
        if not 0.0 < self.p_target < 1.0:
            raise ValueError(f"p_target must be in (0, 1), got {self.p_target}")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError(
                f"costs must be positive, got c_miss={self.c_miss}, c_fa={self.c_fa}"
            )

    @property
    def normalizer(self) -> float:
        return min(self.c_miss * self.p_target, self.c_fa * (1.0 - self.p_target))

    @property
    def bayes_threshold(self) -> float:
        """LLR threshold log(c_fa*(1-p) / (c_miss*p)) used by the actual DCF."""
        return math.log(
            (self.c_fa * (1.0 - self.p_target)) / (self.c_miss * self.p_target)
        )


def split_scores(scores: ScoreSet, labels: TrialLabels):
    """Partition scores into (bona fide, spoof) arrays, validating coverage."""
    missing = [u for u in scores.utt_ids if u not in labels]
    if missing:
        raise ValueError(f"no label for utt_ids: {sorted(missing)[:10]}")
    is_bona = np.array([labels[u] == BONAFIDE for u in scores.utt_ids])
    bona = scores.scores[is_bona]
    spoof = scores.scores[~is_bona]
    if len(bona) == 0 or len(spoof) == 0:
        raise ValueError(
            f"need both classes: got {len(bona)} bona fide and {len(spoof)} spoof trials"
        )
    return bona, spoof


def det_points(bona: np.ndarray, spoof: np.ndarray):
    """Step-function operating points over all threshold plateaus.

    Thresholds are placed between adjacent distinct scores, plus -inf and
    +inf. Returns (pmiss, pfa, thresholds) with pmiss non-decreasing and pfa
    non-increasing.
    """
    bona = np.sort(np.asarray(bona, dtype=np.float64))
    spoof = np.sort(np.asarray(spoof, dtype=np.float64))
    distinct = np.unique(np.concatenate([bona, spoof]))
    thresholds = np.concatenate(
        [[-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]]
    )
    pmiss = np.searchsorted(bona, thresholds, side="left") / len(bona)
    pfa = (len(spoof) - np.searchsorted(spoof, thresholds, side="left")) / len(spoof)
    return pmiss, pfa, thresholds


def _roc_hull(pmiss, pfa, thresholds):
    """Convex frontier of the DET points in the (pfa, pmiss) plane.

    Points on the frontier are reachable by randomizing between two
    thresholds, which is what makes linear interpolation between operating
    points meaningful. Returned sorted by pfa ascending.
    """
    order = np.lexsort((pmiss, pfa))
    hull: list[tuple[float, float, float]] = []
    for i in order:
        p = (pfa[i], pmiss[i], thresholds[i])
        while len(hull) >= 2:
            x1, y1, _ = hull[-2]
            x2, y2, _ = hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def eer(scores: ScoreSet, labels: TrialLabels) -> tuple[float, float]:
    """Equal error rate with linear interpolation on the DET convex frontier.

    Returns (eer, threshold). The threshold is interpolated between the two
    operating points bracketing the miss/false-alarm crossing; infinite
    endpoint thresholds are clamped to one unit beyond the extreme scores.
    """
    bona, spoof = split_scores(scores, labels)
    pmiss, pfa, thresholds = det_points(bona, spoof)
    hull = _roc_hull(pmiss, pfa, thresholds)
    lo = float(min(bona.min(), spoof.min())) - 1.0
    hi = float(max(bona.max(), spoof.max())) + 1.0

    def finite(t):
        return lo if t == -np.inf else hi if t == np.inf else t

    # walking pfa-ascending, pmiss - pfa decreases from +1 to -1
    for (x1, y1, t1), (x2, y2, t2) in zip(hull[:-1], hull[1:]):
        d1, d2 = y1 - x1, y2 - x2
        if d1 >= 0.0 >= d2:
            s = 0.0 if d1 == d2 else d1 / (d1 - d2)
            value = x1 + s * (x2 - x1)
            threshold = finite(t1) + s * (finite(t2) - finite(t1))
            return float(value), float(threshold)
    # single hull point exactly on the diagonal
    x, y, t = hull[-1]
    return float(y), float(finite(t))


def min_dcf(
    scores: ScoreSet, labels: TrialLabels, cfg: DcfConfig
) -> tuple[float, float]:
    """Minimum normalized detection cost over all threshold plateaus.

    Returns (min_dcf, threshold); the threshold is the representative value
    of the minimizing plateau (possibly +-inf for accept-all / reject-all).
    """
    bona, spoof = split_scores(scores, labels)
    pmiss, pfa, thresholds = det_points(bona, spoof)
    dcf = (
        cfg.c_miss * cfg.p_target * pmiss + cfg.c_fa * (1.0 - cfg.p_target) * pfa
    ) / cfg.normalizer
    i = int(np.argmin(dcf))
    return float(dcf[i]), float(thresholds[i])


def act_dcf(scores: ScoreSet, labels: TrialLabels, cfg: DcfConfig) -> float:
    """Normalized detection cost at the fixed Bayes LLR threshold (no minimization)."""
    bona, spoof = split_scores(scores, labels)
    t = cfg.bayes_threshold
    pmiss = np.mean(bona < t)
    pfa = np.mean(spoof >= t)
    return float(
        (cfg.c_miss * cfg.p_target * pmiss + cfg.c_fa * (1.0 - cfg.p_target) * pfa)
        / cfg.normalizer
    )


def cllr(scores: ScoreSet, labels: TrialLabels) -> float:
    """Log-likelihood-ratio cost: 0 for perfect calibrated LLRs, 1 for all-zero.

    Cllr = 0.5 * [ mean_bona log2(1 + e^-s) + mean_spoof log2(1 + e^s) ].
    """
    bona, spoof = split_scores(scores, labels)
    ln2 = math.log(2.0)
    bona_cost = np.mean(np.logaddexp(0.0, -bona)) / ln2
    spoof_cost = np.mean(np.logaddexp(0.0, spoof)) / ln2
    return float(0.5 * (bona_cost + spoof_cost))


def evaluate_all(
    scores: ScoreSet, labels: TrialLabels, cfg: DcfConfig
) -> dict[str, float]:
    """All four challenge metrics, in the fixed reporting order."""
    eer_value, _ = eer(scores, labels)
    min_dcf_value, _ = min_dcf(scores, labels, cfg)
    return {
        "min_dcf": min_dcf_value,
        "act_dcf": act_dcf(scores, labels, cfg),
        "cllr": cllr(scores, labels),
        "eer": eer_value,
    }


def load_scores(path) -> ScoreSet:
    """Read a score file: one 'utt_id<TAB>score' line per trial."""
    pairs = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{line_no}: expected 'utt_id\\tscore', got {line!r}")
        pairs.append((parts[0], float(parts[1])))
    return ScoreSet.from_pairs(pairs)


def save_scores(path, scores: ScoreSet) -> None:
    lines = [f"{u}\t{s:.12g}" for u, s in zip(scores.utt_ids, scores.scores)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_key(path) -> TrialLabels:
    """Read a key file: one 'utt_id<TAB>label' line per trial."""
    labels = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{line_no}: expected 'utt_id\\tlabel', got {line!r}")
        utt, label = parts
        if utt in labels:
            raise ValueError(f"{path}:{line_no}: duplicate utt_id {utt!r}")
        labels[utt] = label.strip()
    return TrialLabels(labels)
