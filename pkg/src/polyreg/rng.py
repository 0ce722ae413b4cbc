"""Counter-based random streams.

Every draw comes from a Philox generator keyed by the 64-bit run seed. A
stream label picks the high counter word, so draws from different stages
never overlap, and draw i of a stream always consumes the same counter
positions. A sampling loop can therefore be split across workers without
changing the numbers.
"""
from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def stream_id(*labels) -> int:
    text = "/".join(str(x) for x in labels).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def bit_generator(seed: int, *labels, start: int = 0) -> np.random.Philox:
    sid = stream_id(*labels)
    bg = np.random.Philox(key=int(seed) & SEED_MASK, counter=sid << 192)
    if start:
        # each counter step yields four 64-bit words
        bg.advance(start)
    return bg


def raw_words(seed: int, labels, count: int, start_word: int = 0) -> np.ndarray:
    """``count`` raw 64-bit words starting at word ``start_word`` of the stream."""
    blk, skip = divmod(start_word, 4)
    bg = bit_generator(seed, *labels, start=blk)
    words = bg.random_raw(count + skip)
    return np.asarray(words, dtype=np.uint64)[skip:]


def points(seed: int, labels, count: int, dim: int, p: int, start: int = 0) -> np.ndarray:
    """``count`` uniform points of F_p^dim; point i depends only on (seed, labels, i).

    Reduction of a 64-bit word mod p has bias below p / 2^64, which is far
    below anything the estimators can resolve.
    """
    if dim == 0:
        return np.zeros((count, 0), dtype=np.int64)
    w = raw_words(seed, labels, count * dim, start_word=start * dim)
    return (w % np.uint64(p)).astype(np.int64).reshape(count, dim)


def uniforms(seed: int, labels, count: int, start: int = 0) -> np.ndarray:
    w = raw_words(seed, labels, count, start_word=start)
    return (w >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def generator(seed: int, *labels) -> np.random.Generator:
    """A full numpy Generator on a labelled stream, for instance generation."""
    return np.random.Generator(bit_generator(seed, *labels))
