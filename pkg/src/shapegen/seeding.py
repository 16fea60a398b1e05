"""Named random substreams derived from a single master seed.

Every source of randomness in the package (dataset synthesis, weight init,
training noise, generation) pulls its own generator from `substream`, so runs
are reproducible end to end and ablations only differ where intended.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def substream(seed: int, *names: str) -> np.random.Generator:
    """Return a generator for the substream identified by `names`.

    The same (seed, names) pair always yields an identical stream; distinct
    names yield statistically independent streams.
    """
    key = tuple(_name_key(n) for n in names)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def generator_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's state."""
    return rng.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    """Rebuild a generator from a `generator_state` snapshot."""
    if state.get("bit_generator") != "PCG64":
        raise ValueError(f"unsupported bit generator: {state.get('bit_generator')!r}")
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng
