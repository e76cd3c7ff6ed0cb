"""Counter-based random streams.

Every draw site in a simulation is addressed by (seed, replicate, round,
purpose) and gets its own Philox generator. Streams never overlap: the
address lives in the Philox key/counter words, and the in-stream block
counter has 2**64 blocks of headroom. Adding a new draw site therefore
never perturbs existing draws, and replicates can run in any order or on
any number of workers with identical results.
"""

import numpy as np
from numpy.random import Generator, Philox

# Purpose codes. Keep stable: they are part of the reproducibility contract.
MODEL_DRAW = 0  # nature draws the model (round 0)
TYPE_DRAW = 1   # per-round agent type
POLICY = 2      # posterior sampling / warm-up arm randomness
NOISE = 3       # outcome noise
AGENT = 4       # strategic-agent internals (nested simulations)

_MASK = (1 << 64) - 1


def stream(seed: int, replicate: int, round_index: int, purpose: int) -> Generator:
    """Independent generator for one (replicate, round, purpose) cell."""
    key = np.array([seed & _MASK, replicate & _MASK], dtype=np.uint64)
    counter = np.array([0, 0, purpose & _MASK, round_index & _MASK], dtype=np.uint64)
    return Generator(Philox(counter=counter, key=key))


class StreamFamily:
    """All streams of one replicate, sharing a single bit generator.

    `at(round, purpose)` yields draws bit-identical to
    `stream(seed, replicate, round, purpose)` but costs a counter reset
    instead of a bit-generator allocation, which matters inside episode
    loops. Not thread-safe, and each returned generator is only valid
    until the next `at` call: one family per replicate, consumed
    sequentially, which is exactly the engine's access pattern.
    """

    def __init__(self, seed: int, replicate: int):
        self._bitgen = Philox(
            key=np.array([seed & _MASK, replicate & _MASK], dtype=np.uint64)
        )
        self._gen = Generator(self._bitgen)

    def at(self, round_index: int, purpose: int) -> Generator:
        state = self._bitgen.state
        state["state"]["counter"][:] = (0, 0, purpose & _MASK, round_index & _MASK)
        state["buffer_pos"] = 4  # discard any buffered block
        state["has_uint32"] = 0
        state["uinteger"] = 0
        self._bitgen.state = state
        return self._gen


def spawn_seed(seed: int, replicate: int, round_index: int, purpose: int) -> int:
    """Derive a fresh 63-bit seed for a nested simulation."""
    return int(stream(seed, replicate, round_index, purpose).integers(0, 1 << 63))
