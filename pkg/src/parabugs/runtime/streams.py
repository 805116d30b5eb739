"""Deterministic per-worker random streams.

Every stream is a Philox generator seeded from
``SeedSequence(master_seed, spawn_key=(chain, kind[, rank]))``:

* ``kind = 0`` -- the *common* stream, keyed by chain only, so every rank
  of a chain draws the identical sequence (cooperative proposals and
  accept tests).
* ``kind = 1`` -- the *specific* stream, keyed by chain and rank
  (independent updates of a worker's own sample cells).
* ``kind = 2`` -- initial-value generation for the chain.

SeedSequence hashes the full key, so distinct keys give statistically
independent streams.
"""

from __future__ import annotations

import numpy as np

COMMON = 0
SPECIFIC = 1
INITS = 2


def make_stream(master_seed, *key):
    seq = np.random.SeedSequence(int(master_seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


class RngStreams:
    """The common/specific stream pair held by one worker."""

    def __init__(self, master_seed, chain, rank):
        self.master_seed = int(master_seed)
        self.chain = int(chain)
        self.rank = int(rank)
        self.common = make_stream(master_seed, chain, COMMON)
        self.specific = make_stream(master_seed, chain, SPECIFIC, rank)

    def inits(self):
        return make_stream(self.master_seed, self.chain, INITS)

    def get_state(self):
        return {
            "common": self.common.bit_generator.state,
            "specific": self.specific.bit_generator.state,
        }

    def set_state(self, state):
        self.common.bit_generator.state = state["common"]
        self.specific.bit_generator.state = state["specific"]
        return self
