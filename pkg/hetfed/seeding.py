"""
Hierarchical random streams.

Every consumer of randomness derives its own ``numpy.random.Generator`` from
the global seed plus a fixed key path (stream, client id, round, ...), so the
draws a client sees never depend on which worker runs it or in what order.
"""
import numpy as np

# Top-level stream ids
SERVER_INIT = 0
SAMPLER = 1
VARIANTS = 2
PARTITION = 3
CLIENT_INIT = 4
CLIENT_BATCHES = 5
EXPORT = 6


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream at ``key`` under the global ``seed``"""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key)))
