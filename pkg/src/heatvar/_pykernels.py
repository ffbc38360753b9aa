"""Numpy implementations of the compiled kernels.

Used when ``heatvar._ckernels`` is not built. ``compensated_cumsum``
performs exactly the same floating point operations as the compiled
version, so the two backends agree bit for bit. ``lower_apply`` goes
through BLAS and agrees with the compiled kernel only to rounding.
"""

import numpy as np


def lower_apply(L, z, out):
    n = L.shape[0]
    if L.shape[1] != n or z.shape[1] != n or out.shape != z.shape:
        raise ValueError("shape mismatch in lower_apply")
    np.matmul(z, L.T, out=out)


def compensated_cumsum(terms, out):
    m, n = terms.shape
    if out.shape != (m, n):
        raise ValueError("shape mismatch in compensated_cumsum")
    s = np.zeros(m)
    c = np.zeros(m)
    for j in range(n):
        x = terms[:, j]
        t = s + x
        c += np.where(np.abs(s) >= np.abs(x), (s - t) + x, (x - t) + s)
        s = t
        out[:, j] = s + c
