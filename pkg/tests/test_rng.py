import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from partial_reid.rng import SplitMix64, substream


def test_reference_vector():
    # Published SplitMix64 outputs for seed 1234567.
    r = SplitMix64(1234567)
    assert [r.next_u64() for _ in range(5)] == [6457827717110365317, 3203168211198807973, 9817491932198370423,
                                                4593380528125082431, 16408922859458223821]


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**9))
def test_substreams_are_reproducible_and_distinct(seed, key):
    a, b, c = substream(seed, key), substream(seed, key), substream(seed, key + 1)
    xs = [a.next_u64() for _ in range(3)]
    assert xs == [b.next_u64() for _ in range(3)]
    assert xs != [c.next_u64() for _ in range(3)]


@given(st.integers(0, 2**64 - 1), st.integers(1, 1000))
def test_randbelow_range(seed, n):
    r = SplitMix64(seed)
    assert all(0 <= r.randbelow(n) < n for _ in range(20))


def test_uniform_and_normal_moments():
    r = SplitMix64(3)
    u = np.array([r.uniform() for _ in range(20000)])
    z = np.array([r.normal() for _ in range(20000)])
    assert u.min() >= 0 and u.max() < 1 and abs(u.mean() - 0.5) < 0.01
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03


def test_permutation():
    assert sorted(SplitMix64(1).permutation(10)) == list(range(10))
