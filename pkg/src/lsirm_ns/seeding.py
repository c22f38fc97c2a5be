"""Deterministic derivation of child seeds from a master seed."""

import numpy as np

# stream tags keep chain seeds and NS-run seeds from colliding
STREAM_CHAIN = 1
STREAM_NS = 2
STREAM_PPC = 3
STREAM_SYNTH = 4


def derive_seed(master_seed: int, stream: int, index: int) -> int:
    """Return a 64-bit seed for child ``index`` of ``stream``."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, stream, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
