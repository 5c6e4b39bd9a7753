"""Seeded random streams.

Every stochastic routine takes a ``numpy.random.Generator``.  Streams are
addressed by ``(seed, stream_id)`` so that row ``j`` of a reference table, or
chain ``c`` of an MCMC run, always sees the same sequence no matter how the
work is split up.
"""
import numpy as np


def rng_stream(seed, stream_id=0):
    """Return a PCG64 generator for the ``(seed, stream_id)`` pair."""
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed, *labels):
    """Derive a 63-bit seed from ``seed`` and string/int labels.

    Used to give each pipeline stage (pilot, refinement, sampling, ...) its own
    independent seed while staying reproducible from one user-facing seed.
    """
    words = [int(seed)]
    for lab in labels:
        if isinstance(lab, str):
            words.extend(lab.encode())
        else:
            words.append(int(lab))
    ss = np.random.SeedSequence(words)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
