# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Both kernels release the GIL so that a thread pool can run independent
blocks concurrently. Every output element is produced by a fixed sequence
of floating point operations that does not depend on how rows are grouped
into blocks, so results are bit-identical for any block size or thread
count.
"""

from libc.math cimport fabs
from libc.stdlib cimport malloc, free

cdef enum:
    MAXB = 32


def lower_apply(const double[:, ::1] L, const double[:, ::1] z, double[:, ::1] out):
    """out[r, i] = sum_{k <= i} L[i, k] * z[r, k], summed with k ascending.

    ``z`` holds one standard normal vector per row. Rows are processed in
    chunks of at most 32 so the inner loop runs over independent
    accumulators and can be vectorised without reassociating any sum.
    """
    cdef Py_ssize_t n = L.shape[0]
    cdef Py_ssize_t m = z.shape[0]
    cdef Py_ssize_t r0, nb, i, k, b
    cdef double lik
    cdef double acc[MAXB]
    cdef double *zt
    cdef const double *lrow
    cdef const double *zrow

    if L.shape[1] != n or z.shape[1] != n or out.shape[0] != m or out.shape[1] != n:
        raise ValueError("shape mismatch in lower_apply")
    if m == 0 or n == 0:
        return
    zt = <double *> malloc(n * MAXB * sizeof(double))
    if zt == NULL:
        raise MemoryError()
    try:
        with nogil:
            r0 = 0
            while r0 < m:
                nb = m - r0
                if nb > MAXB:
                    nb = MAXB
                # transpose the chunk so that column k is contiguous
                for b in range(nb):
                    for k in range(n):
                        zt[k * nb + b] = z[r0 + b, k]
                for i in range(n):
                    for b in range(nb):
                        acc[b] = 0.0
                    lrow = &L[i, 0]
                    for k in range(i + 1):
                        lik = lrow[k]
                        zrow = &zt[k * nb]
                        for b in range(nb):
                            acc[b] = acc[b] + lik * zrow[b]
                    for b in range(nb):
                        out[r0 + b, i] = acc[b]
                r0 += nb
    finally:
        free(zt)


def compensated_cumsum(const double[:, ::1] terms, double[:, ::1] out):
    """Row-wise running sums with Neumaier compensation.

    out[r, j] is the compensated sum of terms[r, 0..j], rounded once.
    """
    cdef Py_ssize_t m = terms.shape[0]
    cdef Py_ssize_t n = terms.shape[1]
    cdef Py_ssize_t r, j
    cdef double s, c, x, t

    if out.shape[0] != m or out.shape[1] != n:
        raise ValueError("shape mismatch in compensated_cumsum")
    with nogil:
        for r in range(m):
            s = 0.0
            c = 0.0
            for j in range(n):
                x = terms[r, j]
                t = s + x
                if fabs(s) >= fabs(x):
                    c = c + ((s - t) + x)
                else:
                    c = c + ((x - t) + s)
                s = t
                out[r, j] = s + c
