"""
Numba kernels over bit-packed rows.

Rows are 2-D uint64 arrays, one row per rule; bit j of a row lives in word j // 64 at position
j % 64, least significant bit first.
"""
import numpy as np
from numba import njit, prange

numba_default = {
    'nopython': True,
    'nogil': True,
    'cache': True,
    'parallel': False,
    'fastmath': False,
    'boundscheck': False,
}

numba_parallel = numba_default.copy()
numba_parallel['parallel'] = True

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)
_ONE = np.uint64(1)
_TWO = np.uint64(2)
_FOUR = np.uint64(4)
_SHIFT = np.uint64(56)


@njit(**numba_default)
def popcount64(x):
    x = x - ((x >> _ONE) & _M1)
    x = (x & _M2) + ((x >> _TWO) & _M2)
    x = (x + (x >> _FOUR)) & _M4
    return (x * _H01) >> _SHIFT


@njit(**numba_parallel)
def row_popcounts(rows):
    n_rows, n_words = rows.shape
    out = np.zeros(n_rows, dtype=np.int64)
    for r in prange(n_rows):
        total = 0
        for w in range(n_words):
            total += np.int64(popcount64(rows[r, w]))
        out[r] = total
    return out


@njit(**numba_parallel)
def column_counts(rows, n_columns):
    """
    Number of set bits per column, i.e. per structure.
    """
    n_rows, n_words = rows.shape
    out = np.zeros(n_words * 64, dtype=np.int64)
    for w in prange(n_words):
        base = w * 64
        for r in range(n_rows):
            x = rows[r, w]
            b = 0
            while x:
                if x & _ONE:
                    out[base + b] += 1
                x >>= _ONE
                b += 1
    return out[:n_columns]


@njit(**numba_parallel)
def diff_column_counts(rows, selected, reference, n_columns):
    """
    For every column, the number of selected rows whose bit differs from `reference`.
    """
    n_words = rows.shape[1]
    out = np.zeros(n_words * 64, dtype=np.int64)
    for w in prange(n_words):
        base = w * 64
        ref = reference[w]
        for k in range(selected.shape[0]):
            x = rows[selected[k], w] ^ ref
            b = 0
            while x:
                if x & _ONE:
                    out[base + b] += 1
                x >>= _ONE
                b += 1
    return out[:n_columns]


@njit(**numba_parallel)
def hamming_to_rows(rows, vector):
    """
    Hamming distance between every row and a packed vector of the same width.
    """
    n_rows, n_words = rows.shape
    out = np.zeros(n_rows, dtype=np.int64)
    for r in prange(n_rows):
        total = 0
        for w in range(n_words):
            total += np.int64(popcount64(rows[r, w] ^ vector[w]))
        out[r] = total
    return out
