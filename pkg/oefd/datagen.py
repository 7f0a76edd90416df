"""Seeded synthetic cross-age data.

Identity is a per-person prototype direction.  Age leaks into both the input
norm and a drift direction shared by everybody, so identity cannot be read
off the norm alone and age has to be actively removed.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, SplitError
from .numerics import Matrix, RandomSource
from .schemas import CrossAgeSplit, Pair, SyntheticSample, SyntheticSpec

logger = logging.getLogger(__name__)

# Negative pairs are enumerated exhaustively below this many candidates.
_ENUMERATE_LIMIT = 200_000


@dataclass(frozen=True)
class SampleArrays:
    inputs: Matrix
    identities: np.ndarray
    ages: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, indices: Sequence[int]) -> "SampleArrays":
        idx = np.asarray(indices, dtype=np.int64)
        return SampleArrays(self.inputs[idx], self.identities[idx], self.ages[idx])


def as_arrays(samples: Sequence[SyntheticSample]) -> SampleArrays:
    if not samples:
        return SampleArrays(np.zeros((0, 0)), np.zeros(0, dtype=np.int64), np.zeros(0))
    return SampleArrays(
        inputs=np.array([s.input for s in samples], dtype=np.float64),
        identities=np.array([s.identity for s in samples], dtype=np.int64),
        ages=np.array([s.age for s in samples], dtype=np.float64),
    )


def generate(spec: SyntheticSpec) -> List[SyntheticSample]:
    """input = (1 + e*t) p_c + e*t d + sigma * noise, with t the age rescaled to [0, 1]."""
    z_min, z_max = spec.age_range
    root = RandomSource(spec.seed)
    drift = root.stream(0).unit_vectors(1, spec.input_dim)[0]
    samples: List[SyntheticSample] = []
    for identity in range(spec.num_identities):
        rng = root.stream(identity + 1)
        prototype = rng.unit_vectors(1, spec.input_dim)[0]
        ages = rng.uniform(z_min, z_max, spec.samples_per_identity)
        noise = rng.normal((spec.samples_per_identity, spec.input_dim))
        t = (ages - z_min) / (z_max - z_min)
        inputs = ((1.0 + spec.age_effect * t)[:, None] * prototype
                  + (spec.age_effect * t)[:, None] * drift
                  + spec.noise_sigma * noise)
        for row, age in zip(inputs, ages):
            samples.append(SyntheticSample(input=row.tolist(), identity=identity, age=float(age)))
    logger.info("Generated %d samples for %d identities", len(samples), spec.num_identities)
    return samples


def _by_identity(samples: Sequence[SyntheticSample]) -> Dict[int, List[int]]:
    groups: Dict[int, List[int]] = {}
    for index, sample in enumerate(samples):
        groups.setdefault(sample.identity, []).append(index)
    return groups


def make_cross_age_split(samples: Sequence[SyntheticSample], test_fraction: float, seed: int) -> CrossAgeSplit:
    """Young-gallery / old-probe split over disjoint train and test identities.

    Test identities are taken in seeded order among the identities that have
    a sample in both the youngest and the oldest quartile of the age span.
    """
    if not 0.0 <= test_fraction <= 1.0:
        raise ConfigError(f"test_fraction must lie in [0, 1], got {test_fraction}", field_name="test_fraction")
    groups = _by_identity(samples)
    identities = sorted(groups)
    num_test = int(math.floor(test_fraction * len(identities) + 0.5))
    if num_test == 0:
        return CrossAgeSplit(train=list(range(len(samples))))

    ages = np.array([s.age for s in samples])
    lo, hi = float(ages.min()), float(ages.max())
    quarter = (hi - lo) / 4.0
    order = RandomSource(seed).permutation(len(identities))

    test_ids: List[int] = []
    rejected: List[int] = []
    for position in order:
        identity = identities[int(position)]
        member_ages = ages[groups[identity]]
        if member_ages.min() <= lo + quarter and member_ages.max() >= hi - quarter:
            test_ids.append(identity)
            if len(test_ids) == num_test:
                break
        else:
            rejected.append(identity)
    if len(test_ids) < num_test:
        raise SplitError(
            f"identity {rejected[0]} lacks a sample in the youngest or oldest age quartile; "
            f"only {len(test_ids)} of {num_test} test identities are usable")

    gallery, probe = [], []
    for identity in sorted(test_ids):
        members = groups[identity]
        # Stable sort keeps the lowest index among equal ages.
        by_age = sorted(members, key=lambda i: samples[i].age)
        gallery.append(by_age[0])
        probe.append(by_age[-1])
    test_set = set(test_ids)
    train = [i for i, s in enumerate(samples) if s.identity not in test_set]
    return CrossAgeSplit(train=train, gallery=gallery, probe=probe)


def make_pairs(samples: Sequence[SyntheticSample], num_positive: int, num_negative: int, seed: int) -> List[Pair]:
    """Same/different identity pairs; positives favour the largest age gaps."""
    if num_positive < 0 or num_negative < 0:
        raise ConfigError("pair counts must be non-negative")
    root = RandomSource(seed)
    groups = _by_identity(samples)
    ages = np.array([s.age for s in samples]) if samples else np.zeros(0)

    positives: List[Tuple[float, float, int, int]] = []
    tie_rng = root.stream(0)
    for identity in sorted(groups):
        members = groups[identity]
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                positives.append((-abs(ages[a] - ages[b]), 0.0, a, b))
    if num_positive > len(positives):
        raise ConfigError(f"requested {num_positive} positive pairs but only {len(positives)} exist",
                          field_name="num_positive")
    keys = tie_rng.uniform(0.0, 1.0, len(positives))
    positives = sorted((gap, float(key), a, b) for (gap, _, a, b), key in zip(positives, keys))
    chosen = [Pair(index_a=a, index_b=b, same=True) for _, _, a, b in positives[:num_positive]]

    n = len(samples)
    total_negative = n * (n - 1) // 2 - len(positives)
    if num_negative > total_negative:
        raise ConfigError(f"requested {num_negative} negative pairs but only {total_negative} exist",
                          field_name="num_negative")
    identities = np.array([s.identity for s in samples], dtype=np.int64)
    neg_rng = root.stream(1)
    if total_negative <= _ENUMERATE_LIMIT:
        a_idx, b_idx = np.triu_indices(n, k=1)
        mask = identities[a_idx] != identities[b_idx]
        a_idx, b_idx = a_idx[mask], b_idx[mask]
        picks = neg_rng.generator.choice(a_idx.size, size=num_negative, replace=False) if num_negative else []
        negatives = [(int(a_idx[p]), int(b_idx[p])) for p in picks]
    else:
        seen = set()
        negatives = []
        while len(negatives) < num_negative:
            a, b = (int(v) for v in neg_rng.generator.integers(0, n, size=2))
            a, b = min(a, b), max(a, b)
            if a == b or identities[a] == identities[b] or (a, b) in seen:
                continue
            seen.add((a, b))
            negatives.append((a, b))
    chosen.extend(Pair(index_a=a, index_b=b, same=False) for a, b in negatives)

    # Interleave so that contiguous folds see both classes.
    order = root.stream(2).permutation(len(chosen))
    return [chosen[int(i)] for i in order]
