"""Seed derivation and keyed random substreams.

Every replication owns one 64-bit seed. All randomness inside a replication is
drawn from numpy generators keyed by ``(seed, purpose, ...)`` so that two
policies run on the same replication see identical feature and label-noise
draws, whatever actions they take.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# purpose tags for SeedSequence keys
_ENV = 0
_ROUND = 1
_BANDIT = 2
_POLICY = 3


def splitmix64(x: int) -> int:
    """One step of the splitmix64 output function."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def replication_seed(master_seed: int, replication: int) -> int:
    """Seed of replication ``replication`` derived from ``master_seed``.

    The i-th seed is ``splitmix64(master + i * golden)``, i.e. the i-th output
    of a splitmix64 sequence started at ``master_seed``.
    """
    return splitmix64((master_seed + replication * _GOLDEN) & _MASK64)


def policy_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class RandomStreams:
    """Factory of independent generators for one replication."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, *key]))

    def env_rng(self) -> np.random.Generator:
        """Generator for the ground-truth parameters (F, G, mu, actions)."""
        return self._rng(_ENV)

    def round_rng(self, t: int) -> np.random.Generator:
        """Features and label noise of round ``t`` (0 is the initial dataset)."""
        return self._rng(_ROUND, t)

    def bandit_rng(self, policy: str, t: int) -> np.random.Generator:
        """Bandit-cost noise of round ``t``, keyed by policy."""
        return self._rng(_BANDIT, policy_key(policy), t)

    def policy_rng(self, policy: str) -> np.random.Generator:
        """Internal randomness of a policy (solver restarts, random exploration)."""
        return self._rng(_POLICY, policy_key(policy))


def as_streams(rng) -> RandomStreams:
    if isinstance(rng, RandomStreams):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RandomStreams(int(rng))
    raise TypeError(f"expected RandomStreams or int seed, got {type(rng).__name__}")
