# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Direct 3x3 same-padding convolution kernels, NCHW layout, float64.

Planes are zero-padded to width W + 2 and flattened, so every kernel tap
becomes one long contiguous axpy (or dot product) over the whole plane.
The two spill columns per row are computed and discarded. Reductions use
a fixed order, so results are reproducible run to run.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _axpy(double a, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n):
        y[j] += a * x[j]


cdef inline double _dot(const double* x, const double* y, Py_ssize_t n) noexcept nogil:
    # eight partial sums, combined in a fixed order
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef double s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0
    cdef Py_ssize_t j = 0
    while j + 8 <= n:
        s0 += x[j] * y[j]
        s1 += x[j + 1] * y[j + 1]
        s2 += x[j + 2] * y[j + 2]
        s3 += x[j + 3] * y[j + 3]
        s4 += x[j + 4] * y[j + 4]
        s5 += x[j + 5] * y[j + 5]
        s6 += x[j + 6] * y[j + 6]
        s7 += x[j + 7] * y[j + 7]
        j += 8
    while j < n:
        s0 += x[j] * y[j]
        j += 1
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))


def conv3x3_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                    const double[::1] b):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0]
    if w.shape[1] != C or w.shape[2] != 3 or w.shape[3] != 3 or b.shape[0] != O:
        raise ValueError("weight/bias shape mismatch")
    cdef Py_ssize_t P = W + 2
    cdef Py_ssize_t L = H * P - 2
    xp_arr = np.zeros((B, C, H + 2, P), dtype=np.float64)
    xp_arr[:, :, 1:H + 1, 1:W + 1] = x
    op_arr = np.empty((B, O, H, P), dtype=np.float64)
    cdef double[:, :, :, ::1] xp = xp_arr
    cdef double[:, :, :, ::1] op = op_arr
    cdef Py_ssize_t n, o, c, di, dj, q
    cdef double* orow
    with nogil:
        for n in range(B):
            for o in range(O):
                orow = &op[n, o, 0, 0]
                for q in range(H * P):
                    orow[q] = b[o]
                for c in range(C):
                    for di in range(3):
                        for dj in range(3):
                            _axpy(w[o, c, di, dj], &xp[n, c, di, dj], orow, L)
    return np.ascontiguousarray(op_arr[:, :, :, :W])


def conv3x3_backward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                     const double[:, :, :, ::1] gout):
    """Return (grad_x, grad_w, grad_b)."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0]
    if gout.shape[0] != B or gout.shape[1] != O or gout.shape[2] != H or gout.shape[3] != W:
        raise ValueError("output-gradient shape mismatch")
    cdef Py_ssize_t P = W + 2
    cdef Py_ssize_t L = H * P - 2
    xp_arr = np.zeros((B, C, H + 2, P), dtype=np.float64)
    xp_arr[:, :, 1:H + 1, 1:W + 1] = x
    # spill columns stay zero so they add nothing to the reductions
    gp_arr = np.zeros((B, O, H, P), dtype=np.float64)
    gp_arr[:, :, :, :W] = gout
    gxp_arr = np.zeros((B, C, H + 2, P), dtype=np.float64)
    gw_arr = np.zeros((O, C, 3, 3), dtype=np.float64)
    cdef double[:, :, :, ::1] xp = xp_arr
    cdef double[:, :, :, ::1] gp = gp_arr
    cdef double[:, :, :, ::1] gxp = gxp_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t n, o, c, di, dj
    cdef const double* grow
    with nogil:
        for n in range(B):
            for o in range(O):
                grow = &gp[n, o, 0, 0]
                for c in range(C):
                    for di in range(3):
                        for dj in range(3):
                            gw[o, c, di, dj] += _dot(grow, &xp[n, c, di, dj], L)
                            _axpy(w[o, c, di, dj], grow, &gxp[n, c, di, dj], L)
    gb_arr = np.asarray(gout).sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gxp_arr[:, :, 1:H + 1, 1:W + 1]), gw_arr, gb_arr
