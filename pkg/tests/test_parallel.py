import time

import pytest

import bfsa.parallel as parallel


@pytest.fixture(autouse=True)
def reset_threads():
    yield
    parallel.set_thread_count(None)


def test_default_is_one_thread(monkeypatch):
    monkeypatch.delenv(parallel.THREADS_VARIABLE, raising=False)

    assert parallel.thread_count_from_environment() == 1


@pytest.mark.parametrize("value", ["0", "-2", "many"])
def test_invalid_environment_values(monkeypatch, value):
    monkeypatch.setenv(parallel.THREADS_VARIABLE, value)

    with pytest.raises(ValueError):
        parallel.thread_count_from_environment()


def test_environment_sets_the_default(monkeypatch):
    monkeypatch.setenv(parallel.THREADS_VARIABLE, "6")

    assert parallel.get_thread_count() == 6


def test_results_keep_input_order():
    parallel.set_thread_count(4)

    def slow_square(x):
        time.sleep(0.001 * (10 - x))
        return x * x

    sut = parallel.thread_map(slow_square, range(10), desc="squares")

    assert sut == [x * x for x in range(10)]


def test_single_thread_and_empty_input():
    parallel.set_thread_count(1)

    assert parallel.thread_map(str, [1, 2]) == ["1", "2"]
    assert parallel.thread_map(str, []) == []


def test_thread_count_must_be_positive():
    with pytest.raises(ValueError):
        parallel.set_thread_count(0)


def test_none_restores_the_environment_default(monkeypatch):
    monkeypatch.setenv(parallel.THREADS_VARIABLE, "2")
    parallel.set_thread_count(5)

    parallel.set_thread_count(None)

    assert parallel.get_thread_count() == 2
