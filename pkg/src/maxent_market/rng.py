"""Reproducible random streams keyed by (seed, stream id)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """A named substream of a root seed.

    Identical ``(seed, stream_id)`` pairs reproduce identical draws; distinct
    ids are independent streams (``numpy.random.SeedSequence`` spawn keys).
    """

    seed: int
    stream_id: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=tuple(int(i) for i in self.stream_id))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(ids))


def as_generator(rng) -> np.random.Generator:
    """Accept an ``RngStream``, a ``Generator``, an int seed or ``None``."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)
