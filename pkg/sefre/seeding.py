import zlib

import numpy as np


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """
    An independent random stream for one named consumer of the run seed
    (`split`, `init`, `shuffle/3`, `dropout/3`, `synth`, ...).
    """
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
