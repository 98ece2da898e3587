"""Weighted score-level fusion of multiple countermeasure systems."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .metrics import DcfConfig, ScoreSet, TrialLabels, eer, min_dcf

_WEIGHT_SUM_TOL = 1e-9

# Named weight presets. paper-7way is the 7-system scheme 0.3 + 0.2 + 5 x 0.1
# (best system 0.3, runner-up 0.2, rest 0.1 each), in system order.
PRESETS: dict[str, tuple[float, ...]] = {
    "paper-7way": (0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1),
}


@dataclass(frozen=True)
class FusionSpec:
    """Ordered (system_id, weight) pairs; weights are >= 0 and sum to 1."""

    systems: tuple[tuple[str, float], ...]

    def __post_init__(self):
        systems = tuple((str(s), float(w)) for s, w in self.systems)
        if not systems:
            raise ConfigError("fusion spec needs at least one system")
        ids = [s for s, _ in systems]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate system ids in fusion spec: {ids}")
        if any(w < 0 for _, w in systems):
            raise ConfigError("fusion weights must be non-negative")
        total = sum(w for _, w in systems)
        if abs(total - 1.0) > _WEIGHT_SUM_TOL:
            raise ConfigError(f"fusion weights must sum to 1, got {total!r}")
        object.__setattr__(self, "systems", systems)

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(w for _, w in self.systems)

    @property
    def system_ids(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.systems)

    @classmethod
    def from_preset(cls, name: str, system_ids) -> "FusionSpec":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
        weights = PRESETS[name]
        system_ids = tuple(system_ids)
        if len(system_ids) != len(weights):
            raise ConfigError(
                f"preset {name!r} pairs {len(weights)} systems, got {len(system_ids)}"
            )
        return cls(systems=tuple(zip(system_ids, weights)))

    @classmethod
    def load(cls, path) -> "FusionSpec":
        systems = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(
                    f"{path}:{line_no}: expected 'system_id\\tweight', got {line!r}"
                )
            systems.append((parts[0], float(parts[1])))
        return cls(systems=tuple(systems))

    def save(self, path) -> None:
        lines = [f"{s}\t{w:.12g}" for s, w in self.systems]
        Path(path).write_text("\n".join(lines) + "\n")


def _check_same_utts(score_sets: Mapping[str, ScoreSet], system_ids) -> None:
    reference = set(score_sets[system_ids[0]].utt_ids)
    for sys_id in system_ids[1:]:
        other = set(score_sets[sys_id].utt_ids)
        if other != reference:
            diff = sorted(reference.symmetric_difference(other))
            raise ValueError(
                f"utt_id mismatch between {system_ids[0]!r} and {sys_id!r}: {diff[:10]}"
            )


def fuse(score_sets: Mapping[str, ScoreSet], spec: FusionSpec) -> ScoreSet:
    """Per-trial weighted sum of system scores.

    Every system in the spec must be present and all score sets must cover an
    identical utterance set. Output follows the first system's trial order.
    """
    missing = [s for s in spec.system_ids if s not in score_sets]
    if missing:
        raise ConfigError(f"score sets missing for systems: {missing}")
    _check_same_utts(score_sets, spec.system_ids)
    first = score_sets[spec.system_ids[0]]
    fused = np.zeros(len(first))
    for sys_id, weight in spec.systems:
        lookup = score_sets[sys_id].as_dict()
        fused += weight * np.array([lookup[u] for u in first.utt_ids])
    return ScoreSet(utt_ids=first.utt_ids, scores=fused)


def _simplex_grid(n_systems: int, n_steps: int):
    """All weight vectors with components i/n_steps summing to 1."""

    def parts(remaining, slots):
        if slots == 1:
            yield (remaining,)
            return
        for i in range(remaining + 1):
            for rest in parts(remaining - i, slots - 1):
                yield (i,) + rest

    for combo in parts(n_steps, n_systems):
        yield tuple(i / n_steps for i in combo)


def grid_search_weights(
    score_sets: Mapping[str, ScoreSet],
    labels: TrialLabels,
    objective: str = "eer",
    step: float = 0.1,
    dcf_config: DcfConfig | None = None,
) -> FusionSpec:
    """Exhaustive simplex-grid search for the fusion weights minimizing a metric.

    The grid contains the unit vectors, so the best fused objective can never
    exceed the best single system. Ties prefer weight on earlier systems.
    """
    system_ids = tuple(score_sets)
    if len(system_ids) == 0:
        raise ValueError("need at least one score set")
    if len(system_ids) > 5:
        raise ValueError(
            f"{len(system_ids)} systems would make the simplex grid explode; "
            "search at most 5 and fuse the winners hierarchically"
        )
    n_steps = round(1.0 / step)
    if n_steps < 1 or abs(n_steps * step - 1.0) > 1e-9:
        raise ValueError(f"step must divide 1 evenly, got {step}")
    if objective == "eer":
        evaluate = lambda s: eer(s, labels)[0]
    elif objective == "min_dcf":
        if dcf_config is None:
            raise ValueError("objective 'min_dcf' needs a dcf_config")
        evaluate = lambda s: min_dcf(s, labels, dcf_config)[0]
    else:
        raise ValueError(f"objective must be 'eer' or 'min_dcf', got {objective!r}")

    _check_same_utts(score_sets, system_ids)
    first = score_sets[system_ids[0]]
    matrix = np.stack(
        [
            np.array([score_sets[s].as_dict()[u] for u in first.utt_ids])
            for s in system_ids
        ]
    )
    best_value = None
    best_weights = None
    for weights in _simplex_grid(len(system_ids), n_steps):
        fused = ScoreSet(first.utt_ids, np.asarray(weights) @ matrix)
        value = evaluate(fused)
        if (
            best_value is None
            or value < best_value
            or (value == best_value and weights > best_weights)
        ):
            best_value = value
            best_weights = weights
    return FusionSpec(systems=tuple(zip(system_ids, best_weights)))
