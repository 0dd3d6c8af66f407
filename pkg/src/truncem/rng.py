"""Counter-based normal variates addressed by (seed, path, driver, index).

Philox4x32-10 maps a 128-bit counter and a 64-bit key to 128 random bits
with no internal state, so any normal in any path can be produced directly
and in any order. Normals come from the inverse CDF, one per 64 random bits,
so normal k of a stream uses half k % 2 of block k // 2.

numpy ships a Philox bit generator, but it is a stateful per-stream object
costing ~10 us to key; ensembles with millions of streams need the
stateless form, compiled with numba.
"""

import math

import numba as nb
import numpy as np

__all__ = ["philox4x32", "normals", "normal_quantile", "MAX_SEED"]

MAX_SEED = (1 << 64) - 1

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


@nb.njit(cache=True, inline="always")
def _philox(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _S32, p0 & _LO
        hi1, lo1 = p1 >> _S32, p1 & _LO
        c0, c1, c2, c3 = (hi1 ^ c1 ^ k0), lo1, (hi0 ^ c3 ^ k1), lo0
        k0 = (k0 + _W0) & _LO
        k1 = (k1 + _W1) & _LO
    return c0, c1, c2, c3


@nb.njit(cache=True)
def _philox_array(ctr, key):
    out = np.empty(4, dtype=np.uint64)
    a, b, c, d = _philox(ctr[0] & _LO, ctr[1] & _LO, ctr[2] & _LO, ctr[3] & _LO,
                         key[0] & _LO, key[1] & _LO)
    out[0], out[1], out[2], out[3] = a, b, c, d
    return out


def philox4x32(counter, key):
    """Raw Philox4x32-10 block for a 4-word counter and 2-word key."""
    ctr = np.asarray(counter, dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    return tuple(int(v) for v in _philox_array(ctr, k))


_TWO_M53 = 1.0 / 9007199254740992.0
_SH11 = np.uint64(11)


@nb.njit(cache=True, inline="always")
def _uniform(hi, lo):
    """Open-interval uniform (m + 1/2) 2**-53 from the top 53 of 64 bits."""
    m = ((hi << _S32) | lo) >> _SH11
    return (float(np.int64(m)) + 0.5) * _TWO_M53


@nb.njit(cache=True, inline="always")
def _ppnd(p):
    """Wichura's AS241 (PPND16) normal quantile, accurate to about 1e-16."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    v = num / den
    return -v if q < 0.0 else v


@nb.njit(cache=True)
def _ppnd_array(p):
    out = np.empty_like(p)
    for i in range(p.size):
        out[i] = _ppnd(p[i])
    return out


def normal_quantile(p):
    """Vectorised standard normal quantile used by the generator."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr <= 0) | (arr >= 1)):
        raise ValueError("probabilities must lie in (0, 1)")
    return _ppnd_array(arr.ravel()).reshape(arr.shape)


@nb.njit(cache=True)
def _fill(out, k0, k1, path_start, driver, scale, quantum):
    """Normal k of row i comes from half k % 2 of the Philox block k // 2.

    Values are multiplied by ``scale``; a positive ``quantum`` then rounds them
    to that (power-of-two) lattice.
    """
    n_paths, n = out.shape
    n_blocks = (n + 1) // 2
    for i in range(n_paths):
        path = np.uint64(path_start + i)
        c1 = path & _LO
        c2 = path >> _S32
        for b in range(n_blocks):
            w0, w1, w2, w3 = _philox(np.uint64(b), c1, c2, np.uint64(driver), k0, k1)
            z = _ppnd(_uniform(w0, w1)) * scale
            if quantum > 0.0:
                z = np.rint(z / quantum) * quantum
            out[i, 2 * b] = z
            if 2 * b + 1 < n:
                z = _ppnd(_uniform(w2, w3)) * scale
                if quantum > 0.0:
                    z = np.rint(z / quantum) * quantum
                out[i, 2 * b + 1] = z


def normals(seed: int, path_start: int, n_paths: int, driver: int, n: int,
            scale: float = 1.0, quantum: float = 0.0) -> np.ndarray:
    """Normals of shape (n_paths, n) for paths path_start .. path_start + n_paths - 1.

    Entry (j, k) depends only on (seed, path_start + j, driver, k). Each value
    is ``scale`` times a standard normal, optionally rounded to multiples of
    ``quantum``, which must be a power of two for the rounding to be exact.
    """
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError("seed must be an unsigned 64-bit integer")
    if path_start < 0 or path_start + n_paths > MAX_SEED:
        raise ValueError("path index out of range")
    if quantum and math.frexp(quantum)[0] != 0.5:
        raise ValueError("quantum must be a power of two")
    out = np.empty((n_paths, n))
    _fill(out, np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32), path_start, driver,
          float(scale), float(quantum))
    return out
