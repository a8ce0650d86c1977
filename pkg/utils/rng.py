from typing import Dict

import numpy as np

# Fixed stream ids; adding a stream must never renumber an existing one.
STREAM_IDS: Dict[str, int] = {
    'dataset': 0,
    'init': 1,
    'misreports': 2,
    'scheduler': 3,
    'validation': 4,
    'baseline': 5,
    'eval': 6,
    'shuffle': 7,
    'baseline_eval': 8,
}


class RandomStreams:
    """Splits one 64-bit seed into independent named generators"""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def sequence(self, name: str) -> np.random.SeedSequence:
        if name not in STREAM_IDS:
            raise KeyError(f'Unknown random stream: {name}')
        return np.random.SeedSequence(self.seed, spawn_key=(STREAM_IDS[name],))

    def generator(self, name: str) -> np.random.Generator:
        """Fresh generator for a named stream; same seed and name give the same draws"""
        return np.random.default_rng(self.sequence(name))
