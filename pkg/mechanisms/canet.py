from typing import Any, Dict, Tuple

import numpy as np

from core.auction import AuctionConfig
from core.feasibility import AllocationLogits, MaskMode
from core.layers import MLP, Dense
from core.tensor import Tensor
from mechanisms.base import NeuralMechanism


class CANet(NeuralMechanism):
    """Fully connected allocation and pricing networks over the flattened bid matrix"""

    kind = 'canet'

    def __init__(self,
                 config: AuctionConfig,
                 rng: np.random.Generator,
                 hidden_layers: int = 3,
                 hidden_units: int = 100,
                 theta: float = 10.0,
                 mask_mode: MaskMode = 'masked'):
        super().__init__(config, theta, mask_mode)
        self.hidden_layers = hidden_layers
        self.hidden_units = hidden_units
        n, m, k = config.n, config.m, config.k
        hidden = [hidden_units] * hidden_layers

        self.allocation_body = self.add_module('allocation', MLP(n * k, hidden, rng))
        self.head_agent = self.add_module('head_agent', Dense(hidden_units, n * k, rng))
        self.head_bundle = self.add_module('head_bundle', Dense(hidden_units, n * k, rng))
        self.head_item = self.add_module('head_item', Dense(hidden_units, m * k, rng))

        self.pricing_body = self.add_module('pricing', MLP(n * k, hidden, rng))
        self.head_price = self.add_module('head_price', Dense(hidden_units, n, rng))

    def logits(self, bids: Tensor) -> Tuple[AllocationLogits, Tensor]:
        batch = bids.shape[0]
        n, m, k = self.config.n, self.config.m, self.config.k
        flat = bids.reshape(batch, n * k)

        h = self.allocation_body(flat)
        logits = AllocationLogits(
            agent=self.head_agent(h).reshape(batch, n, k),
            bundle=self.head_bundle(h).reshape(batch, n, k),
            item=self.head_item(h).reshape(batch, m, k),
            theta=self.theta,
        )
        pricing = self.head_price(self.pricing_body(flat)).sigmoid()
        return logits, pricing

    def describe(self) -> Dict[str, Any]:
        return {
            **super().describe(),
            'hidden_layers': self.hidden_layers,
            'hidden_units': self.hidden_units,
        }
