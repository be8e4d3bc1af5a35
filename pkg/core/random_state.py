from contextlib import contextmanager
from typing import Generator

import torch


def make_generator(seed: int) -> torch.Generator:
    """CPU generator seeded for one independent random stream."""
    return torch.Generator().manual_seed(int(seed))


@contextmanager
def seeded(seed: int) -> Generator[None, None, None]:
    # Parameter initialization draws from the global RNG; fork it so model
    # construction is reproducible without leaking state to the caller.
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield
