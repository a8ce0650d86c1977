import hashlib
import json
import os
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from core.auction import AuctionConfig, SettingName, ValuationProfile, bidder_distributions, sample_profiles
from utils.error_handler import DatasetError
from utils.logging import setup_logger

logger = setup_logger('dataset')

CACHE_MAGIC = b'CAFORGE\x01'
CSV_COLUMNS = ['profile', 'bidder', 'bundle', 'value']


def _manifest_path(path: str) -> str:
    return f'{path}.json'


class ProfileCache:
    """Binary valuation caches: magic, shape header, then little-endian float64 data"""

    @staticmethod
    def write(path: str, values: np.ndarray, meta: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Write ``values`` and a JSON manifest (shape, checksum, meta) next to it"""
        data = np.ascontiguousarray(values, dtype='<f8')
        if data.shape[0] == 0:
            raise DatasetError('Refusing to write an empty profile cache', path)
        header = CACHE_MAGIC + np.array([data.ndim], dtype='<u4').tobytes() \
            + np.array(data.shape, dtype='<i8').tobytes()
        payload = data.tobytes()
        manifest = {
            'format': 'caforge-profiles',
            'dtype': '<f8',
            'shape': list(data.shape),
            'sha256': hashlib.sha256(payload).hexdigest(),
            **(meta or {}),
        }
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, 'wb') as f:
                f.write(header)
                f.write(payload)
            with open(_manifest_path(path), 'w') as f:
                json.dump(manifest, f, indent=2)
        except OSError as e:
            raise DatasetError(f'Could not write profile cache: {e}', path) from e
        logger.info(f'Wrote {data.shape[0]} profiles to {path}')
        return manifest

    @staticmethod
    def read(path: str, verify: bool = True) -> Tuple[np.ndarray, Dict[str, Any]]:
        try:
            with open(path, 'rb') as f:
                raw = f.read()
            with open(_manifest_path(path)) as f:
                manifest = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DatasetError(f'Could not read profile cache: {e}', path) from e

        if not raw.startswith(CACHE_MAGIC):
            raise DatasetError('Not a caforge profile cache (bad magic)', path)
        offset = len(CACHE_MAGIC)
        ndim = int(np.frombuffer(raw, dtype='<u4', count=1, offset=offset)[0])
        offset += 4
        shape = tuple(int(s) for s in np.frombuffer(raw, dtype='<i8', count=ndim, offset=offset))
        offset += 8 * ndim
        payload = raw[offset:]
        if len(payload) != 8 * int(np.prod(shape)):
            raise DatasetError(f'Truncated cache: expected shape {shape}', path)
        if verify and hashlib.sha256(payload).hexdigest() != manifest.get('sha256'):
            raise DatasetError('Checksum mismatch', path)
        return np.frombuffer(payload, dtype='<f8').reshape(shape).copy(), manifest

    @staticmethod
    def to_frame(values: np.ndarray) -> pd.DataFrame:
        """Long format: one row per (profile, bidder, bundle bitmask)"""
        batch, n, k = values.shape
        profile, bidder, column = np.meshgrid(np.arange(batch), np.arange(n), np.arange(k), indexing='ij')
        return pd.DataFrame({
            'profile': profile.ravel(),
            'bidder': bidder.ravel(),
            'bundle': column.ravel() + 1,
            'value': values.ravel(),
        }, columns=CSV_COLUMNS)

    @staticmethod
    def export_csv(path: str, values: np.ndarray) -> None:
        try:
            ProfileCache.to_frame(values).to_csv(path, index=False)
        except OSError as e:
            raise DatasetError(f'Could not write CSV export: {e}', path) from e

    @staticmethod
    def read_csv(path: str, config: AuctionConfig) -> np.ndarray:
        try:
            df = pd.read_csv(path)
        except (OSError, pd.errors.ParserError) as e:
            raise DatasetError(f'Could not read CSV export: {e}', path) from e
        missing = [c for c in CSV_COLUMNS if c not in df.columns]
        if missing:
            raise DatasetError(f'Missing columns: {missing}', path)
        batch = int(df['profile'].max()) + 1 if len(df) else 0
        values = np.zeros((batch, config.n, config.k))
        values[df['profile'].to_numpy(), df['bidder'].to_numpy(), df['bundle'].to_numpy() - 1] = \
            df['value'].to_numpy(dtype=np.float64)
        return values


def generate(setting: SettingName,
             config: AuctionConfig,
             count: int,
             rng: np.random.Generator) -> ValuationProfile:
    if count <= 0:
        raise DatasetError(f'Profile count must be positive, got {count}')
    return sample_profiles(setting, config, count, rng)


def load_or_generate(path: str,
                     setting: SettingName,
                     config: AuctionConfig,
                     count: int,
                     rng: np.random.Generator) -> ValuationProfile:
    """Reuse a matching cache at ``path`` or sample ``count`` profiles and write one"""
    if os.path.exists(path):
        values, manifest = ProfileCache.read(path)
        if (manifest.get('setting') == setting and values.shape[1:] == (config.n, config.k)
                and values.shape[0] >= count):
            logger.info(f'Using cached profiles from {path}')
            return ValuationProfile(values[:count], setting, bidder_distributions(setting, config.n))
        logger.warning(f'Cache {path} does not match setting={setting} n={config.n} m={config.m}; regenerating')
    profile = generate(setting, config, count, rng)
    ProfileCache.write(path, profile.values, {'setting': setting, 'n': config.n, 'm': config.m})
    return profile
