from typing import Any, Dict, Optional

import numpy as np

from config import ExperimentSpec
from core.auction import AuctionConfig
from core.checkpoint import load_checkpoint, save_checkpoint
from mechanisms.base import NeuralMechanism
from mechanisms.caformer import CAFormer
from mechanisms.canet import CANet
from utils.error_handler import ConfigurationError, DatasetError, ValidationError
from utils.logging import setup_logger

logger = setup_logger('factory')


def build_mechanism(spec: ExperimentSpec, rng: np.random.Generator) -> NeuralMechanism:
    """Create a freshly initialized network for ``spec``"""
    config = AuctionConfig(spec.n, spec.m)
    train = spec.train
    if spec.mechanism == 'canet':
        return CANet(config, rng,
                     hidden_layers=train.hidden_layers,
                     hidden_units=train.hidden_units,
                     theta=train.theta,
                     mask_mode=train.mask_mode)
    if spec.mechanism == 'caformer':
        return CAFormer(config, rng,
                        d_model=train.d_model,
                        heads=train.heads,
                        theta=train.theta,
                        positional_mode=spec.resolved_positional_mode(),
                        normalize_item_projection=train.normalize_item_projection,
                        mask_mode=train.mask_mode)
    raise ConfigurationError(f'{spec.mechanism} is not a trainable mechanism')


def from_descriptor(descriptor: Dict[str, Any], rng: Optional[np.random.Generator] = None) -> NeuralMechanism:
    """Rebuild a network from its architecture descriptor (weights left at their init)"""
    rng = rng or np.random.default_rng(0)
    try:
        config = AuctionConfig(int(descriptor['n']), int(descriptor['m']))
        kind = descriptor['type']
        common = {'theta': descriptor['theta'], 'mask_mode': descriptor.get('mask_mode', 'masked')}
        if kind == 'canet':
            return CANet(config, rng,
                         hidden_layers=descriptor['hidden_layers'],
                         hidden_units=descriptor['hidden_units'],
                         **common)
        if kind == 'caformer':
            return CAFormer(config, rng,
                            d_model=descriptor['d_model'],
                            heads=descriptor['heads'],
                            positional_mode=descriptor.get('positional_mode', 'none'),
                            normalize_item_projection=descriptor.get('normalize_item_projection', False),
                            **common)
    except KeyError as e:
        raise ValidationError(f'Architecture descriptor is missing {e}')
    raise ValidationError(f'Unknown architecture type: {kind!r}')


def save_mechanism(mechanism: NeuralMechanism, directory: str, extra: Optional[Dict[str, Any]] = None) -> str:
    path = save_checkpoint(directory, mechanism.state(), mechanism.describe(), extra)
    logger.info(f'Saved {mechanism.kind} checkpoint to {directory}')
    return path


def load_mechanism(directory: str) -> NeuralMechanism:
    state, manifest = load_checkpoint(directory)
    if 'architecture' not in manifest:
        raise DatasetError('Checkpoint manifest has no architecture descriptor', directory)
    mechanism = from_descriptor(manifest['architecture'])
    mechanism.load_state(state)
    return mechanism
