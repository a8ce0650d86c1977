"""Exchangeable layers followed by axis-wise self-attention over bids and item projections."""
from typing import Any, Dict, Literal, Tuple

import numpy as np

from core.auction import AuctionConfig
from core.feasibility import AllocationLogits, MaskMode
from core.layers import AxisAttention, Dense, ExchangeableLayer, sinusoidal_encoding
from core.tensor import Tensor, concat, take
from mechanisms.base import NeuralMechanism
from utils.error_handler import ValidationError

PositionalMode = Literal['none', 'agent_bundle']


def item_projection(bids: Tensor, config: AuctionConfig, normalize: bool = False) -> Tensor:
    """b' = (bᵀ b_item)ᵀ of shape (batch, m, k), b_item taken from the singleton columns"""
    b_item = take(bids, config.singleton_columns, axis=-1)
    projected = b_item.swapaxes(-1, -2) @ bids
    if normalize:
        projected = projected / (projected.sum(axis=-1, keepdims=True) + 1e-12)
    return projected


class CAFormer(NeuralMechanism):
    kind = 'caformer'

    def __init__(self,
                 config: AuctionConfig,
                 rng: np.random.Generator,
                 d_model: int = 64,
                 heads: int = 2,
                 theta: float = 10.0,
                 positional_mode: PositionalMode = 'none',
                 normalize_item_projection: bool = False,
                 mask_mode: MaskMode = 'masked'):
        super().__init__(config, theta, mask_mode)
        if positional_mode not in ('none', 'agent_bundle'):
            raise ValidationError(f'Unknown positional mode: {positional_mode!r}')
        self.d_model = d_model
        self.heads = heads
        self.positional_mode = positional_mode
        self.normalize_item_projection = normalize_item_projection

        self.exchange_bids = self.add_module('exchange_bids', ExchangeableLayer(1, d_model, rng))
        self.exchange_items = self.add_module('exchange_items', ExchangeableLayer(1, d_model, rng))

        # views of b: sequences over agents and over bundles
        self.agent_attention = self.add_module('agent_attention', AxisAttention(d_model, heads, 'first', rng))
        self.bundle_attention = self.add_module('bundle_attention', AxisAttention(d_model, heads, 'second', rng))
        # views of b': sequences over items and over bundles
        self.item_attention = self.add_module('item_attention', AxisAttention(d_model, heads, 'first', rng))
        self.item_bundle_attention = self.add_module(
            'item_bundle_attention', AxisAttention(d_model, heads, 'second', rng))

        self.head_agent = self.add_module('head_agent', Dense(2 * d_model, 1, rng))
        self.head_bundle = self.add_module('head_bundle', Dense(2 * d_model, 1, rng))
        self.head_item = self.add_module('head_item', Dense(2 * d_model, 1, rng))
        self.head_price = self.add_module('head_price', Dense(d_model, 1, rng))

        if positional_mode == 'agent_bundle':
            self.agent_encoding = sinusoidal_encoding(config.n, d_model)[None, :, None, :]
            self.bundle_encoding = sinusoidal_encoding(config.k, d_model)[None, None, :, :]

    def logits(self, bids: Tensor) -> Tuple[AllocationLogits, Tensor]:
        batch = bids.shape[0]
        n, m, k = self.config.n, self.config.m, self.config.k

        b_ex = self.exchange_bids(bids.reshape(batch, n, k, 1))
        projected = item_projection(bids, self.config, self.normalize_item_projection)
        b_item_ex = self.exchange_items(projected.reshape(batch, m, k, 1))
        if self.positional_mode == 'agent_bundle':
            b_ex = b_ex + self.agent_encoding + self.bundle_encoding
            b_item_ex = b_item_ex + self.bundle_encoding

        agent_view = self.agent_attention(b_ex)
        b_concat = concat([agent_view, self.bundle_attention(b_ex)], axis=-1)
        b_item_concat = concat([self.item_attention(b_item_ex), self.item_bundle_attention(b_item_ex)], axis=-1)

        logits = AllocationLogits(
            agent=self.head_agent(b_concat).reshape(batch, n, k),
            bundle=self.head_bundle(b_concat).reshape(batch, n, k),
            item=self.head_item(b_item_concat).reshape(batch, m, k),
            theta=self.theta,
        )
        pricing = self.head_price(agent_view.mean(axis=2)).reshape(batch, n).sigmoid()
        return logits, pricing

    def describe(self) -> Dict[str, Any]:
        return {
            **super().describe(),
            'd_model': self.d_model,
            'heads': self.heads,
            'positional_mode': self.positional_mode,
            'normalize_item_projection': self.normalize_item_projection,
        }
