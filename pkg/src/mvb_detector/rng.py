"""Counter-based random streams.

Every random quantity that must be reproducible independently of evaluation
order is read from a Philox stream at a fixed counter position. A stream is
identified by ``(seed, purpose)``; the second counter word carries a
caller-chosen index (the MCMC iteration, for example) and the first counter
word addresses blocks of four 64-bit outputs inside that stream. Any slice of
a stream can therefore be regenerated without generating what precedes it.
"""

from __future__ import annotations

import numpy as np

# stream purposes
MOVES = 1
AUGMENT = 2
SIMULATE = 3
CENSOR = 4
COVARIATES = 5

_MASK64 = (1 << 64) - 1
_TO_UNIT = 2.0**-52


def _key(seed: int, purpose: int) -> int:
    return (int(seed) & _MASK64) | (int(purpose) << 64)


def raw_block(seed: int, purpose: int, index: int, start: int, count: int) -> np.ndarray:
    """Raw uint64 outputs ``start .. start+count-1`` of stream ``(seed, purpose, index)``.

    ``start`` must be a multiple of four (one Philox block).
    """
    if start % 4:
        raise ValueError("start must be aligned to a Philox block of 4 outputs")
    bitgen = np.random.Philox(key=_key(seed, purpose), counter=[start // 4, int(index), 0, 0])
    return bitgen.random_raw(count)


def open_uniforms(raw: np.ndarray) -> np.ndarray:
    """Map raw uint64 draws to uniforms strictly inside (0, 1).

    52 bits plus a half step keep the largest value at 1 - 2**-53, which is
    representable; with 53 bits it would round up to exactly 1.
    """
    return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * _TO_UNIT


def uniforms(seed: int, purpose: int, index: int, start: int, count: int) -> np.ndarray:
    return open_uniforms(raw_block(seed, purpose, index, start, count))


def generator(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """A sequential ``Generator`` positioned at the start of a stream."""
    return np.random.Generator(
        np.random.Philox(key=_key(seed, purpose), counter=[0, int(index), 0, 0])
    )


def derive_seeds(seed: int, n: int) -> list[int]:
    """Independent 64-bit seeds for ``n`` parallel chains."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]
