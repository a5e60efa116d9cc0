"""Counter-based per-trial random streams.

Every trial owns a Philox stream keyed by ``(seed, trial)``.  Streams are
independent of execution order, so trials can be farmed out to any number
of workers and still reproduce bit-for-bit.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def trial_rng(seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    """Generator for one trial.

    ``stream`` selects a disjoint sub-sequence (offset in the high counter
    word) so that different uses inside one trial never overlap.
    """
    if trial < 0 or stream < 0:
        raise ValueError("trial and stream must be non-negative")
    key = np.array([seed & _MASK64, trial & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, stream & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
