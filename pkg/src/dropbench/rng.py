"""Seedable, splittable random streams for replayable stochastic inference.

Every source of randomness in the toolkit flows through an RngStream: a
value-like (seed, stream_id) pair that deterministically names one random
sequence. Streams are backed by a counter-based Philox generator keyed
through numpy's SeedSequence, so distinct stream ids give statistically
independent sequences without any shared mutable state, and the same
(seed, stream_id) always reproduces the same draws bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Names one reproducible random sequence.

    seed is the experiment-level entropy; stream_id distinguishes
    independent uses of it (one per Monte Carlo pass, per training step,
    and so on). Frozen so streams can be copied freely across workers.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= MASK64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if not 0 <= self.stream_id <= MASK64:
            raise ValueError(f"stream_id must fit in 64 bits, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))

    def substream(self, index: int) -> "RngStream":
        """Derive a child stream; children with distinct indices are independent."""
        seq = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, index)
        )
        child_seed = int(seq.generate_state(1, np.uint64)[0])
        return RngStream(seed=child_seed, stream_id=0)


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a mix of strings and ints.

    Used to give every (sweep seed, model, config) cell its own independent
    base seed that survives process restarts.
    """
    import hashlib

    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "big")
