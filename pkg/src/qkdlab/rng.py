"""Deterministic random substreams.

Every trial gets its own generators derived from ``(master seed, trial)``:
``SeedSequence(seed, spawn_key=(trial, stream))`` feeding a Philox
counter-based bit generator. Stream ids are fixed, so a trial can be
replayed in isolation and trials can run in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STREAM_IDS = {"plan": 0, "basis": 1, "outcome": 2, "attack": 3}


def substream(seed: int, trial: int, stream: str) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(int(trial), STREAM_IDS[stream]))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class TrialStreams:
    plan: np.random.Generator
    basis: np.random.Generator
    outcome: np.random.Generator
    attack: np.random.Generator


def trial_streams(seed: int, trial: int) -> TrialStreams:
    return TrialStreams(**{name: substream(seed, trial, name) for name in STREAM_IDS})


def as_streams(rng: TrialStreams | np.random.Generator) -> TrialStreams:
    """Wrap a single generator so that every stream draws from it."""
    if isinstance(rng, TrialStreams):
        return rng
    return TrialStreams(rng, rng, rng, rng)
