"""Counter-based derivation of independent random streams from one master seed.

Every random draw in the package comes from a generator built by
:func:`substream`, keyed by ``(master_seed, purpose, *coordinates)``.  Because
a stream depends only on its key, work can be split across any number of
workers (or re-run in any order) and still consume exactly the same numbers.

Purposes in use:

========================  ===============================================
key                        coordinates
========================  ===============================================
``SIEVE``                  (unit, replicate)
``RESAMPLE``               (coordinate, resample index)
``DGP``                    () -- one stream per generated dataset
========================  ===============================================
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

SIEVE = 1
RESAMPLE = 2
DGP = 3


def substream(master_seed: int, purpose: int, *coords: int) -> np.random.Generator:
    """Return the generator for ``(master_seed, purpose, *coords)``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(purpose, *map(int, coords)))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(master_seed: int, *labels) -> int:
    """Derive a 63-bit seed from a master seed and arbitrary JSON-able labels.

    Used to give each experiment cell/replication its own master seed: the
    value depends only on the labels, so adding cells never shifts others.
    """
    payload = json.dumps([int(master_seed), *labels], sort_keys=True, default=str)
    digest = hashlib.sha256(payload.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
