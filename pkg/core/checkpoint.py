"""Parameter checkpoints: a flat little-endian float64 blob plus a JSON manifest.

The manifest maps every parameter name to its shape and element offset in the
blob and carries the architecture descriptor needed to rebuild the network.
"""
import hashlib
import json
import os
from typing import Any, Dict, Optional, Tuple

import numpy as np

from utils.error_handler import DatasetError

BLOB_DTYPE = '<f8'
MANIFEST_NAME = 'manifest.json'
BLOB_NAME = 'params.bin'


def save_checkpoint(directory: str,
                    state: Dict[str, np.ndarray],
                    descriptor: Dict[str, Any],
                    extra: Optional[Dict[str, Any]] = None) -> str:
    """Write ``state`` under ``directory``; returns the manifest path"""
    try:
        os.makedirs(directory, exist_ok=True)
        entries = {}
        offset = 0
        chunks = []
        for name, value in state.items():
            flat = np.ascontiguousarray(value, dtype=BLOB_DTYPE).ravel()
            entries[name] = {'shape': list(np.shape(value)), 'offset': offset}
            offset += flat.size
            chunks.append(flat)
        blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype=BLOB_DTYPE)
        raw = blob.astype(BLOB_DTYPE).tobytes()
        with open(os.path.join(directory, BLOB_NAME), 'wb') as f:
            f.write(raw)
        manifest = {
            'format': 'caforge-checkpoint',
            'dtype': BLOB_DTYPE,
            'count': int(offset),
            'sha256': hashlib.sha256(raw).hexdigest(),
            'architecture': descriptor,
            'parameters': entries,
            'extra': extra or {},
        }
        manifest_path = os.path.join(directory, MANIFEST_NAME)
        with open(manifest_path, 'w') as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        return manifest_path
    except OSError as e:
        raise DatasetError(f'Failed to write checkpoint ({e.strerror})', directory)


def load_checkpoint(directory: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a checkpoint; returns (state, manifest)"""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    blob_path = os.path.join(directory, BLOB_NAME)
    if not os.path.exists(manifest_path) or not os.path.exists(blob_path):
        raise DatasetError('Checkpoint not found', directory)
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
        with open(blob_path, 'rb') as f:
            raw = f.read()
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f'Failed to read checkpoint ({e})', directory)
    if hashlib.sha256(raw).hexdigest() != manifest.get('sha256'):
        raise DatasetError('Checkpoint blob does not match manifest checksum', blob_path)
    blob = np.frombuffer(raw, dtype=BLOB_DTYPE)
    state = {}
    for name, entry in manifest['parameters'].items():
        shape = tuple(entry['shape'])
        size = int(np.prod(shape)) if shape else 1
        start = entry['offset']
        state[name] = blob[start:start + size].astype(np.float64).reshape(shape)
    return state, manifest
