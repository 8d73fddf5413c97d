"""Tests for the on-disk eigenvalue cache."""

import json
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from specdet.core.cache import CACHE_ENV, FORMAT_VERSION, EigenCache, default_cache_dir


def _entry(cache, key):
    return cache.directory / f"{key}.v{FORMAT_VERSION}.npz", cache.directory / f"{key}.v{FORMAT_VERSION}.json"


def test_put_get_round_trip(tmp_path):
    cache = EigenCache(tmp_path / "eig")
    values = np.array([1.0, 2.5 + 0.5j, 4.0])
    assert cache.get("abc") is None
    cache.put("abc", values, {"kind": "laplace"})
    assert np.array_equal(cache.get("abc"), values)
    assert (cache.hits, cache.misses) == (1, 1)

    meta = json.loads(_entry(cache, "abc")[1].read_text())
    assert meta["provenance"] == {"kind": "laplace"}
    assert meta["count"] == 3


def test_corrupt_payload_is_a_miss(tmp_path, caplog):
    cache = EigenCache(tmp_path)
    cache.put("key", np.arange(4, dtype=complex))
    payload, _ = _entry(cache, "key")
    with open(payload, "wb") as f:
        np.savez(f, eigenvalues=np.arange(5, dtype=complex))
    with caplog.at_level(logging.WARNING):
        assert cache.get("key") is None
    assert "Checksum mismatch" in caplog.text
    assert cache.misses == 1

    payload.write_bytes(b"not a zip archive")
    assert cache.get("key") is None


def test_version_mismatch_is_a_miss(tmp_path):
    cache = EigenCache(tmp_path)
    cache.put("key", np.ones(3))
    _, meta_path = _entry(cache, "key")
    meta = json.loads(meta_path.read_text())
    meta["format_version"] = FORMAT_VERSION + 1
    meta_path.write_text(json.dumps(meta))
    assert cache.get("key") is None


def test_clear_and_default_directory(tmp_path, monkeypatch):
    cache = EigenCache(tmp_path)
    cache.put("a", np.ones(2))
    cache.put("b", np.ones(2))
    assert cache.clear() == 4
    assert cache.get("a") is None
    assert EigenCache(tmp_path / "missing").clear() == 0

    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "env"))
    assert default_cache_dir() == tmp_path / "env"


def test_concurrent_readers(tmp_path):
    cache = EigenCache(tmp_path)
    values = np.linspace(0, 1, 100).astype(complex)
    cache.put("shared", values)
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(lambda _: cache.get("shared"), range(32)))
    assert all(np.array_equal(r, values) for r in results)
    assert not list(tmp_path.glob(".tmp-*"))
