"""Counter-based Philox4x32-10 generator.

Every random number in the simulator is a pure function of
``(seed, counter)``, so results do not depend on how trials or molecules are
split across workers.  Counter layout (four 32-bit words):

* Brownian increments: ``(molecule_id, event_index, trial_index, substep)``
* TX bits:             ``(symbol_index, 0xFFFFFFFF, trial_index, 0)``

The 64-bit master seed is the key: ``(seed & 0xFFFFFFFF, seed >> 32)``.
Event indices never reach ``0xFFFFFFFF``, so the two streams are disjoint.

The round function is written once against ``np.uint64`` operands and works
unchanged on numba scalars and on numpy arrays.
"""

import math

import numpy as np

from ._accel import njit

_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_INV_2_32 = 1.0 / 4294967296.0

TX_STREAM = 0xFFFFFFFF


def _rounds(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            ((p1 >> _SHIFT) ^ c1 ^ k0) & _MASK,
            p1 & _MASK,
            ((p0 >> _SHIFT) ^ c3 ^ k1) & _MASK,
            p0 & _MASK,
        )
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


philox_block = njit(inline="always")(_rounds)


# Inverse normal CDF, Wichura's AS241 (PPND16), relative error ~1e-16.
_PA = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427, 13731.693765509461125,
       45921.953931549871457, 67265.770927008700853, 33430.575583588128105, 2509.0809287301226727)
_PB = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
       21213.794301586595867, 39307.89580009271061, 28729.085735721942674, 5226.495278852545925)
_PC = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055, 3.64784832476320460504,
       1.27045825245236838258, 0.24178072517745061177, 0.0227238449892691845833, 7.7454501427834140764e-4)
_PD = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
       0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4, 1.05075007164441684324e-9)
_PE = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358, 0.29656057182850489123,
       0.026532189526576123093, 0.0012426609473880784386, 2.71155556874348757815e-5, 2.01033439929228813265e-7)
_PF = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
       7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7, 2.04426310338993978564e-15)


def _horner(c, x):
    return ((((((c[7] * x + c[6]) * x + c[5]) * x + c[4]) * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0]


_horner_jit = njit(inline="always")(_horner)


@njit(inline="always")
def _ppf(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _horner_jit(_PA, r) / _horner_jit(_PB, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        v = _horner_jit(_PC, r) / _horner_jit(_PD, r)
    else:
        r = r - 5.0
        v = _horner_jit(_PE, r) / _horner_jit(_PF, r)
    return -v if q < 0.0 else v


_libm_log = np.frompyfunc(math.log, 1, 1)


def _ppf_array(p):
    q = p - 0.5
    central = np.abs(q) <= 0.425
    r = 0.180625 - q * q
    out = q * _horner(_PA, r) / _horner(_PB, r)
    tail = ~central
    if tail.any():
        pt, qt = p[tail], q[tail]
        # libm log, as used by the compiled path; numpy's SIMD log can differ by an ulp
        r = np.sqrt(-_libm_log(np.where(qt < 0.0, pt, 1.0 - pt)).astype(np.float64))
        near = r <= 5.0
        v = np.where(near, _horner(_PC, r - 1.6) / _horner(_PD, r - 1.6), _horner(_PE, r - 5.0) / _horner(_PF, r - 5.0))
        out[tail] = np.where(qt < 0.0, -v, v)
    return out


@njit(inline="always")
def normals3(c0, c1, c2, c3, k0, k1):
    """Three standard normals from one Philox block (inverse CDF of words 0..2)."""
    w0, w1, w2, w3 = philox_block(c0, c1, c2, c3, k0, k1)
    u0 = (np.float64(w0) + 0.5) * _INV_2_32
    u1 = (np.float64(w1) + 0.5) * _INV_2_32
    u2 = (np.float64(w2) + 0.5) * _INV_2_32
    return _ppf(u0), _ppf(u1), _ppf(u2)


def seed_to_key(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def philox4x32(counter, key):
    """Vectorised Philox4x32-10.

    ``counter`` has shape ``(4, ...)`` and ``key`` shape ``(2, ...)``; both are
    broadcast.  Returns a ``(4, ...)`` uint32 array.
    """
    c = [np.asarray(x, dtype=np.uint64) for x in counter]
    k = [np.asarray(x, dtype=np.uint64) for x in key]
    if len(c) != 4 or len(k) != 2:
        raise ValueError("counter needs 4 words and key 2 words")
    out = _rounds(*c, *k)
    return np.stack(np.broadcast_arrays(*out)).astype(np.uint32)


def normals3_array(c0, c1, c2, c3, key):
    """Numpy twin of :func:`normals3`; returns an ``(N, 3)`` array."""
    w = philox4x32((c0, c1, c2, c3), key)[:3].astype(np.float64)
    u = (w + 0.5) * _INV_2_32
    return _ppf_array(u.reshape(-1)).reshape(3, -1).T.reshape(np.shape(u)[1:] + (3,))


def tx_bits(seed, trial_indices, L, p1):
    """Bernoulli(p1) TX sequences, one row per trial index."""
    key = seed_to_key(seed)
    trials = np.asarray(trial_indices, dtype=np.uint64)[:, None]
    symbols = np.arange(L, dtype=np.uint64)[None, :]
    w = philox4x32((symbols, np.uint64(TX_STREAM), trials, np.uint64(0)), key)[0]
    u = (w.astype(np.float64) + 0.5) * _INV_2_32
    return (u < p1).astype(np.int8)
