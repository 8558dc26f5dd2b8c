"""Integer seed derivation shared by every stage that needs randomness."""

from __future__ import annotations

import numpy as np


def derive_seed(seed, *keys: int) -> int | None:
    """Child seed of ``seed`` for the path ``keys``; None stays None (fresh entropy).

    Distinct key paths give independent streams, and the mapping is a pure
    function of its arguments.
    """
    if seed is None:
        return None
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(state.generate_state(1, np.uint64)[0])
