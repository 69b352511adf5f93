import hashlib
import json
import logging
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd
from flask import current_app, g

from utils.errors import MissingArtifactError

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
TRACKED_PACKAGES = ('numpy', 'scipy', 'pandas', 'flask')


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f'{type(value).__name__} is not JSON serializable')


def dump_json(obj, path):
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_json_default)
        f.write('\n')


def package_versions():
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


class ArtifactStore:
    """Stage outputs under one run directory, indexed by a manifest of sha256 hashes"""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / MANIFEST
        self.manifest = self._load_manifest()

    def _load_manifest(self):
        if self.manifest_path.exists():
            with open(self.manifest_path) as f:
                return json.load(f)
        return {'stages': {}}

    def _save_manifest(self):
        dump_json(self.manifest, self.manifest_path)

    def begin_run(self, cfg_hash, seeds):
        """Bind the store to a configuration; artifacts from another configuration are dropped"""
        previous = self.manifest.get('config_hash')
        if previous is not None and previous != cfg_hash:
            logger.warning('configuration changed (%s -> %s); upstream artifacts are stale',
                           previous[:12], cfg_hash[:12])
            self.manifest['stages'] = {}
        self.manifest['config_hash'] = cfg_hash
        self.manifest['seeds'] = dict(seeds)
        self.manifest['versions'] = package_versions()
        self.manifest.setdefault('stages', {})
        self._save_manifest()

    def path(self, stage, name):
        return self.root / stage / name

    def _record(self, stage, name, path):
        files = self.manifest['stages'].setdefault(stage, {'files': {}})['files']
        files[name] = file_hash(path)
        self._save_manifest()

    def start_stage(self, stage):
        self.manifest['stages'][stage] = {'files': {}}
        self._save_manifest()

    def write_csv(self, stage, name, frame):
        path = self.path(stage, name)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
        self._record(stage, name, path)
        return path

    def write_json(self, stage, name, obj):
        path = self.path(stage, name)
        path.parent.mkdir(parents=True, exist_ok=True)
        dump_json(obj, path)
        self._record(stage, name, path)
        return path

    def _verified(self, stage, name):
        path = self.path(stage, name)
        expected = self.manifest['stages'].get(stage, {}).get('files', {}).get(name)
        if expected is None or not path.exists():
            raise MissingArtifactError(stage, f'{stage}/{name} is missing')
        if file_hash(path) != expected:
            raise MissingArtifactError(stage, f'{stage}/{name} does not match the manifest')
        return path

    def read_csv(self, stage, name):
        return pd.read_csv(self._verified(stage, name))

    def read_json(self, stage, name):
        with open(self._verified(stage, name)) as f:
            return json.load(f)

    def has_stage(self, stage):
        return stage in self.manifest['stages']


def get_store(root=None):
    """Artifact store of the current command, created on first use"""
    if 'store' not in g:
        g.store = ArtifactStore(root or current_app.config['OUTPUT_DIR'])
    return g.store
