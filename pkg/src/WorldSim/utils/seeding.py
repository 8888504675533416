import hashlib
from typing import Union

import numpy as np
import torch


def derive_seed(seed: int, *names: Union[str, int]) -> int:
    """
    Derive an independent 63-bit seed for a named substream of a global seed.

    The same (seed, names) always gives the same result, e.g.
    `derive_seed(7, "world_model", "batch", 12)`.
    """
    digest = hashlib.sha256(repr((int(seed),) + tuple(names)).encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def numpy_generator(seed: int, *names: Union[str, int]) -> np.random.Generator:
    """A numpy generator seeded from a named substream."""
    return np.random.default_rng(derive_seed(seed, *names))


def torch_generator(seed: int, *names: Union[str, int]) -> torch.Generator:
    """A CPU torch generator seeded from a named substream."""
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *names))
    return generator
