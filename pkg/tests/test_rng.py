import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from truncem.rng import MAX_SEED, normal_quantile, normals, philox4x32

# Random123 known-answer vectors for Philox4x32-10
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    assert philox4x32(ctr, key) == expected


def test_quantile_matches_scipy():
    p = np.concatenate([np.linspace(1e-9, 1 - 1e-9, 100_001),
                        10.0 ** -np.linspace(9, 16, 500), 1 - 10.0 ** -np.linspace(9, 15.5, 500)])
    ours, ref = normal_quantile(p), special.ndtri(p)
    assert np.max(np.abs(ours - ref) / np.maximum(np.abs(ref), 1e-300)) < 1e-14


def test_quantile_rejects_endpoints():
    with pytest.raises(ValueError):
        normal_quantile([0.0, 0.5])


def test_normals_distribution():
    z = normals(12345, 0, 200, 0, 1000).ravel()
    assert stats.kstest(z, "norm").pvalue > 1e-3
    assert abs(z.mean()) < 5 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 5 * np.sqrt(2 / z.size)


def test_drivers_and_seeds_decorrelated():
    a = normals(1, 0, 50, 0, 2000).ravel()
    b = normals(1, 0, 50, 1, 2000).ravel()
    c = normals(2, 0, 50, 0, 2000).ravel()
    for other in (b, c):
        assert abs(np.corrcoef(a, other)[0, 1]) < 5 / np.sqrt(a.size)


@given(seed=st.integers(0, MAX_SEED), start=st.integers(0, 2**62), n=st.integers(1, 40),
       split=st.integers(0, 40))
def test_addressable(seed, start, n, split):
    """Values depend only on (seed, path, driver, index), not on batching or length."""
    full = normals(seed, start, 3, 2, n)
    k = min(split, n)
    for j in range(3):
        row = normals(seed, start + j, 1, 2, n)[0]
        assert np.array_equal(row, full[j])
        if k:
            assert np.array_equal(normals(seed, start + j, 1, 2, k)[0], full[j, :k])


def test_quantised_values_on_lattice():
    q = 2.0 ** -36
    z = normals(5, 0, 10, 0, 500, scale=0.03, quantum=q)
    assert np.array_equal(np.round(z / q) * q, z)
    raw = normals(5, 0, 10, 0, 500) * 0.03
    assert np.max(np.abs(z - raw)) <= q / 2


def test_argument_checks():
    with pytest.raises(ValueError):
        normals(-1, 0, 1, 0, 4)
    with pytest.raises(ValueError):
        normals(MAX_SEED + 1, 0, 1, 0, 4)
    with pytest.raises(ValueError):
        normals(0, 0, 1, 0, 4, quantum=0.3)
