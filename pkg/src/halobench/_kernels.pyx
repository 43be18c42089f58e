# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled strided copy kernels between a 4-D mesh view and a flat message buffer.

The flat stream of a region is ``values[:, box].ravel()`` in C order
(variable-major, then lexicographic cells). Both kernels release the GIL so
packing workers of one rank run concurrently.
"""

from libc.string cimport memcpy


cdef inline void _split(Py_ssize_t k, Py_ssize_t s0, Py_ssize_t s1, Py_ssize_t s2,
                        Py_ssize_t* v, Py_ssize_t* i, Py_ssize_t* j, Py_ssize_t* l) nogil:
    l[0] = k % s2
    k //= s2
    j[0] = k % s1
    k //= s1
    i[0] = k % s0
    v[0] = k // s0


def pack_range(double[:, :, :, ::1] values, tuple lo, tuple shape,
               double[::1] out, Py_ssize_t start, Py_ssize_t stop):
    """Write flat elements ``[start, stop)`` of the region into ``out``; zero past its end."""
    cdef Py_ssize_t o0 = lo[0], o1 = lo[1], o2 = lo[2]
    cdef Py_ssize_t s0 = shape[0], s1 = shape[1], s2 = shape[2]
    cdef Py_ssize_t logical = values.shape[0] * s0 * s1 * s2
    cdef Py_ssize_t end = stop if stop < logical else logical
    cdef Py_ssize_t k = start, run, v, i, j, l
    if stop > out.shape[0] or start < 0:
        raise ValueError("element range outside buffer")
    with nogil:
        if k < end:
            _split(k, s0, s1, s2, &v, &i, &j, &l)
        while k < end:
            run = s2 - l
            if run > end - k:
                run = end - k
            memcpy(&out[k], &values[v, o0 + i, o1 + j, o2 + l], run * sizeof(double))
            k += run
            l = 0
            j += 1
            if j == s1:
                j = 0
                i += 1
                if i == s0:
                    i = 0
                    v += 1
        if k < start:
            k = start
        while k < stop:
            out[k] = 0.0
            k += 1


def unpack_range(double[:, :, :, ::1] values, tuple lo, tuple shape,
                 double[::1] buf, Py_ssize_t start, Py_ssize_t stop):
    """Scatter flat elements ``[start, stop)`` of ``buf`` into the region; padding is ignored."""
    cdef Py_ssize_t o0 = lo[0], o1 = lo[1], o2 = lo[2]
    cdef Py_ssize_t s0 = shape[0], s1 = shape[1], s2 = shape[2]
    cdef Py_ssize_t logical = values.shape[0] * s0 * s1 * s2
    cdef Py_ssize_t end = stop if stop < logical else logical
    cdef Py_ssize_t k = start, run, v, i, j, l
    if end > buf.shape[0] or start < 0:
        raise ValueError("element range outside buffer")
    with nogil:
        if k < end:
            _split(k, s0, s1, s2, &v, &i, &j, &l)
        while k < end:
            run = s2 - l
            if run > end - k:
                run = end - k
            memcpy(&values[v, o0 + i, o1 + j, o2 + l], &buf[k], run * sizeof(double))
            k += run
            l = 0
            j += 1
            if j == s1:
                j = 0
                i += 1
                if i == s0:
                    i = 0
                    v += 1
