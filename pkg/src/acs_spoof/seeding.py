import zlib

import numpy as np


def substream(seed, name):
    """Independent generator for the named purpose under one root seed.

    ``substream(7, "init")`` and ``substream(7, "batching")`` never share
    state, so changing how one consumer draws leaves the others untouched.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
