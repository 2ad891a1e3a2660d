"""Counter-based random streams.

Every stochastic routine in the package draws from a Philox generator keyed
by ``(seed, stream_index)``.  Distinct indices give statistically independent
streams, and the mapping is stable across platforms and thread counts, which
is what makes replicate-level reproducibility possible.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

_MASK = (1 << 64) - 1


def substream(seed: int, index: int) -> np.random.Generator:
    """Return the Philox generator for stream ``index`` under ``seed``."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValidationError(f"seed must be a nonnegative integer, got {seed!r}")
    if not isinstance(index, (int, np.integer)) or index < 0:
        raise ValidationError(f"stream index must be a nonnegative integer, got {index!r}")
    key = np.array([seed & _MASK, index & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
