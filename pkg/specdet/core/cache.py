"""Content-addressed on-disk cache of operator spectra."""

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

FORMAT_VERSION = 1
CACHE_ENV = "SPECDET_CACHE_DIR"


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "specdet"))


def _checksum(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype=complex).tobytes()).hexdigest()


class EigenCache:
    """Eigenvalue store keyed by operator fingerprint.

    Each entry is an ``.npz`` payload plus a JSON sidecar holding the format
    version, a checksum of the payload and the operator provenance. Writes go
    through a temporary file and ``os.replace`` so readers only ever see a
    complete entry; the last writer for a key wins.
    """

    def __init__(self, directory: Union[str, Path, None] = None):
        self.directory = Path(directory) if directory is not None else default_cache_dir()
        self.logger = logging.getLogger(__name__)
        self.hits = 0
        self.misses = 0

    def _paths(self, key: str):
        stem = f"{key}.v{FORMAT_VERSION}"
        return self.directory / f"{stem}.npz", self.directory / f"{stem}.json"

    def get(self, key: str) -> Optional[np.ndarray]:
        payload_path, meta_path = self._paths(key)
        if not payload_path.exists() or not meta_path.exists():
            self.misses += 1
            return None
        try:
            with open(meta_path, "r") as f:
                meta = json.load(f)
            with np.load(payload_path) as data:
                values = data["eigenvalues"]
        except (OSError, ValueError, KeyError) as exc:
            self.logger.warning(f"Unreadable cache entry {key[:12]}: {exc}")
            self.misses += 1
            return None
        if meta.get("format_version") != FORMAT_VERSION:
            self.misses += 1
            return None
        if meta.get("checksum") != _checksum(values):
            self.logger.warning(f"Checksum mismatch for cache entry {key[:12]}, recomputing")
            self.misses += 1
            return None
        self.hits += 1
        self.logger.debug(f"Cache hit {key[:12]}")
        return values

    def put(self, key: str, values: np.ndarray, provenance: Optional[Dict[str, Any]] = None) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        payload_path, meta_path = self._paths(key)
        values = np.ascontiguousarray(values, dtype=complex)
        meta = {
            "key": key,
            "format_version": FORMAT_VERSION,
            "checksum": _checksum(values),
            "count": int(values.size),
            "provenance": provenance or {},
        }
        self._atomic_write(payload_path, lambda f: np.savez(f, eigenvalues=values))
        self._atomic_write(meta_path, lambda f: f.write(json.dumps(meta, indent=2, default=str).encode()))
        self.logger.debug(f"Cached {values.size} eigenvalues under {key[:12]}")

    def _atomic_write(self, path: Path, writer) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-", suffix=path.suffix)
        try:
            with os.fdopen(fd, "wb") as f:
                writer(f)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def clear(self) -> int:
        removed = 0
        if self.directory.exists():
            for entry in self.directory.glob("*.v*.*"):
                entry.unlink()
                removed += 1
        return removed
