from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from remote_build.delta_sync.checksum import (
    block_checksums,
    combine,
    roll,
    rolling_checksums,
    weak_checksum,
    weak_parts,
)


def scratch(block: bytes) -> int:
    """Oracle: the defining sums evaluated term by term."""
    L = len(block)
    s1 = sum(block) % 65536
    s2 = sum((L - i) * x for i, x in enumerate(block)) % 65536
    return s1 + 65536 * s2


def test_worked_values() -> None:
    assert weak_parts(bytes([1, 2, 3])) == (6, 10)
    assert weak_checksum(bytes([1, 2, 3])) == 655366
    assert weak_checksum(bytes([0])) == 0
    assert weak_parts(bytes([2, 3, 4])) == (9, 16)
    assert weak_checksum(bytes([2, 3, 4])) == 1048585


def test_roll_worked_value() -> None:
    assert roll((6, 10), 1, 4, 3) == (9, 16)
    assert combine(roll((6, 10), 1, 4, 3)) == weak_checksum(bytes([2, 3, 4]))


def test_roll_identity_slide() -> None:
    # a constant window slides onto itself
    block = bytes([7, 7, 7, 7])
    state = weak_parts(block)
    assert roll(state, 7, 7, 4) == state


def test_roll_same_byte_keeps_s1_only() -> None:
    # [1,2,3] -> [2,3,1]: same byte sum, different positional sum
    state = roll(weak_parts(bytes([1, 2, 3])), 1, 1, 3)
    assert state == weak_parts(bytes([2, 3, 1]))
    assert state[0] == 6 and state[1] != 10


def test_empty_block_rejected() -> None:
    with pytest.raises(ValueError):
        weak_checksum(b"")


def test_modulus_wraparound() -> None:
    block = bytes([255]) * 5000
    assert weak_checksum(block) == scratch(block)


@settings(max_examples=200)
@given(st.binary(min_size=1, max_size=300))
def test_weak_matches_scratch(block: bytes) -> None:
    assert weak_checksum(block) == scratch(block)


def test_ten_thousand_random_rolls() -> None:
    rng = np.random.default_rng(1)
    L = 97
    data = rng.integers(0, 256, 10_000 + L, dtype=np.uint8).tobytes()
    state = weak_parts(data[:L])
    for k in range(1, 10_001):
        state = roll(state, data[k - 1], data[k + L - 1], L)
        assert combine(state) == scratch(data[k:k + L])


@settings(max_examples=100)
@given(st.binary(min_size=1, max_size=500), st.integers(1, 80))
def test_vectorized_windows_match_rolling(data: bytes, L: int) -> None:
    got = rolling_checksums(data, L)
    if len(data) < L:
        assert got.size == 0
        return
    state = weak_parts(data[:L])
    expected = [combine(state)]
    for k in range(1, len(data) - L + 1):
        state = roll(state, data[k - 1], data[k + L - 1], L)
        expected.append(combine(state))
    assert got.tolist() == expected


@given(st.binary(max_size=700), st.sampled_from([64, 100, 128]))
def test_block_checksums_match_scratch(data: bytes, L: int) -> None:
    expected = [scratch(data[i:i + L]) for i in range(0, len(data), L)]
    assert block_checksums(data, L).tolist() == expected
