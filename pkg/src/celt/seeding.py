"""Named random substreams derived from one master seed.

Each substream is a counter-based Philox generator keyed by the master seed
and a stable hash of the stream name, so turning one stage on or off never
shifts another stage's random numbers.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key])))
