"""Tests for the grid executor."""

import pytest

from specdet.core.execution import GridExecutor, default_executor


def _square(x):
    if x == 3:
        raise ValueError("bad point")
    return x * x


@pytest.mark.parametrize("workers", [1, 4])
def test_results_keep_grid_order(workers):
    results = GridExecutor(workers).run(_square, range(6))
    assert [r.index for r in results] == list(range(6))
    assert [r.value for r in results if r.success] == [0, 1, 4, 16, 25]
    failed = results[3]
    assert not failed.success and failed.error == "bad point"


def test_map_raises_first_failure():
    assert GridExecutor(3).map(lambda x: x + 1, [1, 2, 3]) == [2, 3, 4]
    with pytest.raises(ValueError):
        GridExecutor(2).map(_square, range(6))


def test_executor_validation():
    with pytest.raises(ValueError):
        GridExecutor(0)
    shared = GridExecutor(2)
    assert default_executor(shared) is shared
    assert default_executor(None).workers == 1
