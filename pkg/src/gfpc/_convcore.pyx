# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled 2-D convolution core (cross-correlation, NCHW single image).

Both entry points take pre-padded inputs and preallocated outputs; padding and
shape validation live in gfpc.kernels. Partial products for one output element
are accumulated in (in-channel, kernel-row, kernel-col) order. The numpy
fallback and the quadruple-loop reference use the same order, which together
with -ffp-contract=off makes all implementations bit-identical.
"""

from libc.stdlib cimport free, malloc

cimport cython
from cython cimport floating


@cython.boundscheck(False)
@cython.wraparound(False)
def conv2d_forward(floating[:, :, ::1] xpad, floating[:, :, :, ::1] w,
                   int stride, floating[:, :, ::1] out):
    """out[co,y,x] = sum_{ci,i,j} xpad[ci, s*y+i, s*x+j] * w[co,ci,i,j]."""
    cdef Py_ssize_t co, ci, i, j, y, x, n
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = out.shape[1], wo = out.shape[2]
    cdef Py_ssize_t win = cin * kh * kw
    cdef floating xv
    cdef floating* wt
    cdef floating* acc
    cdef floating* wrow
    with nogil:
        # Transposed weight copy wt[(ci,i,j), co]: the inner loop then runs
        # over contiguous memory and vectorizes across output channels.
        wt = <floating*> malloc(win * cout * sizeof(floating))
        acc = <floating*> malloc(cout * sizeof(floating))
        for co in range(cout):
            n = 0
            for ci in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        wt[n * cout + co] = w[co, ci, i, j]
                        n += 1
        for y in range(ho):
            for x in range(wo):
                for co in range(cout):
                    acc[co] = 0
                n = 0
                for ci in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            xv = xpad[ci, stride * y + i, stride * x + j]
                            wrow = wt + n * cout
                            for co in range(cout):
                                acc[co] = acc[co] + xv * wrow[co]
                            n += 1
                for co in range(cout):
                    out[co, y, x] = acc[co]
        free(acc)
        free(wt)


@cython.boundscheck(False)
@cython.wraparound(False)
def conv2d_backward(floating[:, :, ::1] xpad, floating[:, :, :, ::1] w,
                    floating[:, :, ::1] gout, int stride,
                    floating[:, :, ::1] gxpad, floating[:, :, :, ::1] gw,
                    bint need_gx):
    """Accumulate input and weight gradients for conv2d_forward.

    gxpad must be zero-initialized by the caller; gw is overwritten. Pass
    need_gx=False to skip the input gradient (first layer of a net).
    """
    cdef Py_ssize_t co, ci, i, j, y, x, n
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gout.shape[1], wo = gout.shape[2]
    cdef Py_ssize_t win = cin * kh * kw
    cdef floating gv, xv
    cdef floating* wing
    cdef floating* gwt
    cdef floating* gvec
    cdef const floating* w2
    with nogil:
        wing = <floating*> malloc(win * sizeof(floating))
        gwt = <floating*> malloc(win * cout * sizeof(floating))
        gvec = <floating*> malloc(cout * sizeof(floating))
        for n in range(win * cout):
            gwt[n] = 0
        w2 = &w[0, 0, 0, 0]
        for y in range(ho):
            for x in range(wo):
                for co in range(cout):
                    gvec[co] = gout[co, y, x]
                if need_gx:
                    for n in range(win):
                        wing[n] = 0
                    for co in range(cout):
                        gv = gvec[co]
                        for n in range(win):
                            wing[n] = wing[n] + gv * w2[co * win + n]
                    n = 0
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                gxpad[ci, stride * y + i, stride * x + j] += wing[n]
                                n += 1
                n = 0
                for ci in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            xv = xpad[ci, stride * y + i, stride * x + j]
                            for co in range(cout):
                                gwt[n * cout + co] = gwt[n * cout + co] + xv * gvec[co]
                            n += 1
        # untranspose: gw[co,ci,i,j] <- gwt[(ci,i,j), co]
        for co in range(cout):
            n = 0
            for ci in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        gw[co, ci, i, j] = gwt[n * cout + co]
                        n += 1
        free(gvec)
        free(gwt)
        free(wing)
