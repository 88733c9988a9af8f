"""Epoch planning: per-dataset pair budgets, shuffling, and symmetrization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

# Per-epoch pair budgets for the unified training mix (595k unique pairs).
EPOCH_PAIR_COUNTS = {
    "BlendedMVS": 100_000,
    "MegaDepth": 100_000,
    "TartanAirV2": 100_000,
    "ScanNetppV2": 100_000,
    "HabitatCAD": 25_000,
    "StaticThings": 10_000,
    "Kubric4D": 50_000,
    "FlyingThings": 50_000,
    "FlyingChairs": 25_000,
    "Spring": 25_000,
    "Monkaa": 5_000,
    "HD1K": 5_000,
}


@dataclass
class EpochPlan:
    counts: dict = field(default_factory=lambda: dict(EPOCH_PAIR_COUNTS))
    symmetrize: bool = True
    seed: int = 0

    def __post_init__(self):
        for name, count in self.counts.items():
            if count < 0:
                raise ValueError(f"negative pair count for {name}: {count}")

    @property
    def unique_pairs(self):
        return sum(self.counts.values())


@dataclass(frozen=True)
class PlanEntry:
    dataset: str
    record: object
    reversed: bool


def epoch_plan(cfg, manifests):
    """Draw the shuffled epoch's ordered pair list.

    Each dataset contributes cfg.counts[name] pairs drawn from its manifest
    (without replacement when it is large enough, with replacement plus a
    warning otherwise). With symmetrize on, every drawn pair appears twice,
    forward and reversed, adjacently. Identical seeds give byte-identical
    plans on any platform.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    drawn = []
    for name in sorted(cfg.counts):
        count = cfg.counts[name]
        if count == 0:
            continue
        if name not in manifests:
            raise KeyError(
                f"no manifest for dataset {name!r}; have {sorted(manifests)}"
            )
        records = manifests[name]
        if len(records) == 0:
            raise ValueError(f"manifest for {name!r} is empty")
        if len(records) >= count:
            idx = rng.choice(len(records), size=count, replace=False)
        else:
            warnings.warn(
                f"{name}: manifest has {len(records)} pairs, sampling {count} with replacement",
                stacklevel=2,
            )
            idx = rng.integers(len(records), size=count)
        drawn.extend((name, records[int(i)]) for i in idx)

    order = rng.permutation(len(drawn))
    plan = []
    for i in order:
        name, record = drawn[int(i)]
        plan.append(PlanEntry(name, record, False))
        if cfg.symmetrize:
            plan.append(PlanEntry(name, record, True))
    return plan
