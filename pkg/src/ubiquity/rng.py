"""Counter-based random streams.

Every random quantity is addressed by ``(seed, stream, position)``: the
stream picks a Philox key, the position is the counter.  Drawing the
uniforms for positions ``[start, start + n)`` therefore gives the same
numbers whatever order or chunking the caller uses.
"""

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1

# stream tags keep unrelated consumers apart under one seed
STREAM_CASCADE = 1
STREAM_CPC = 2
STREAM_POISSON = 3
STREAM_UNIFORM = 4
STREAM_AUDIT = 5


def _bitgen(seed, stream):
    key = np.array([int(seed) & _MASK64, int(stream) & _MASK64], dtype=np.uint64)
    return np.random.Philox(key=key)


def raw(seed, stream, n, start=0):
    """Raw 64-bit words at counter positions ``start .. start+n-1``."""
    bg = _bitgen(seed, stream)
    start = int(start)
    # Philox advances in blocks of four words
    block, offset = divmod(start, 4)
    if block:
        bg.advance(block)
    words = bg.random_raw(int(n) + offset)
    return np.asarray(words, dtype=np.uint64)[offset:]


def uniforms(seed, stream, n, start=0):
    """Uniforms in the open interval (0, 1), 53-bit resolution."""
    words = raw(seed, stream, n, start)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed, stream, n, start=0):
    """Standard normals by inverse CDF, so position ``i`` maps to one value."""
    return ndtri(uniforms(seed, stream, n, start))


def generator(seed, stream):
    """A numpy Generator on the keyed stream, for draws that are not position-addressed."""
    return np.random.Generator(_bitgen(seed, stream))


def substream(stream, index):
    """Derive a stream id for a numbered sub-task (generation, seed replicate, ...)."""
    return (int(stream) << 32) | (int(index) & 0xFFFFFFFF)
