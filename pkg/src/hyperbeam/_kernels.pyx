# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the Yee update and the explicit Pennes step.

Every function here has a drop-in twin in ``_kernels_py`` with identical
arguments; ``hyperbeam.kernels`` picks one at import time.
"""

from libc.math cimport fabs


def update_h(double[:, ::1] ez, double[:, ::1] hx, double[:, ::1] hy,
             double ch, double rdx, double rdy,
             const double[::1] ikx_h, const double[::1] iky_h,
             const double[::1] bx_h, const double[::1] ax_h,
             const double[::1] by_h, const double[::1] ay_h,
             const unsigned char[::1] pmlx_h, const unsigned char[::1] pmly_h,
             double[:, ::1] psi_hy_x, double[:, ::1] psi_hx_y):
    cdef Py_ssize_t nx = ez.shape[0], ny = ez.shape[1]
    cdef Py_ssize_t i, j
    cdef double d, p
    with nogil:
        for i in range(nx):
            for j in range(ny - 1):
                d = (ez[i, j + 1] - ez[i, j]) * rdy
                if pmly_h[j]:
                    p = by_h[j] * psi_hx_y[i, j] + ay_h[j] * d
                    psi_hx_y[i, j] = p
                    hx[i, j] -= ch * (d * iky_h[j] + p)
                else:
                    hx[i, j] -= ch * d
        for i in range(nx - 1):
            if pmlx_h[i]:
                for j in range(ny):
                    d = (ez[i + 1, j] - ez[i, j]) * rdx
                    p = bx_h[i] * psi_hy_x[i, j] + ax_h[i] * d
                    psi_hy_x[i, j] = p
                    hy[i, j] += ch * (d * ikx_h[i] + p)
            else:
                for j in range(ny):
                    hy[i, j] += ch * (ez[i + 1, j] - ez[i, j]) * rdx


cdef inline void _e_cell(double[:, ::1] ez, double[:, ::1] jp,
                         const int[:, ::1] mat,
                         const double[::1] ca, const double[::1] cb, const double[::1] cj,
                         const double[::1] ka, const double[::1] kb,
                         Py_ssize_t i, Py_ssize_t j, double curl) noexcept nogil:
    cdef int m = mat[i, j]
    cdef double e0 = ez[i, j]
    cdef double e1 = ca[m] * e0 + cb[m] * curl - cj[m] * jp[i, j]
    jp[i, j] = ka[m] * jp[i, j] + kb[m] * (e1 - e0)
    ez[i, j] = e1


def update_e(double[:, ::1] ez, double[:, ::1] jp,
             const double[:, ::1] hx, const double[:, ::1] hy,
             const int[:, ::1] mat,
             const double[::1] ca, const double[::1] cb, const double[::1] cj,
             const double[::1] ka, const double[::1] kb,
             double rdx, double rdy,
             const double[::1] ikx_e, const double[::1] iky_e,
             const double[::1] bx_e, const double[::1] ax_e,
             const double[::1] by_e, const double[::1] ay_e,
             const unsigned char[::1] pmlx_e, const unsigned char[::1] pmly_e,
             double[:, ::1] psi_ez_x, double[:, ::1] psi_ez_y):
    cdef Py_ssize_t nx = ez.shape[0], ny = ez.shape[1]
    cdef Py_ssize_t i, j, jlo, jhi
    cdef double dhy, dhx, curl, p
    # interior columns [jlo, jhi) carry no y-PML
    jlo = 1
    while jlo < ny - 1 and pmly_e[jlo]:
        jlo += 1
    jhi = ny - 1
    while jhi > jlo and pmly_e[jhi - 1]:
        jhi -= 1
    with nogil:
        for i in range(1, nx - 1):
            for j in range(1, ny - 1):
                if pmlx_e[i] == 0 and j == jlo:
                    break
                dhy = (hy[i, j] - hy[i - 1, j]) * rdx
                dhx = (hx[i, j] - hx[i, j - 1]) * rdy
                curl = dhy * ikx_e[i] - dhx * iky_e[j]
                if pmlx_e[i]:
                    p = bx_e[i] * psi_ez_x[i, j] + ax_e[i] * dhy
                    psi_ez_x[i, j] = p
                    curl = curl + p
                if pmly_e[j]:
                    p = by_e[j] * psi_ez_y[i, j] + ay_e[j] * dhx
                    psi_ez_y[i, j] = p
                    curl = curl - p
                _e_cell(ez, jp, mat, ca, cb, cj, ka, kb, i, j, curl)
            if pmlx_e[i] == 0:
                for j in range(jlo, jhi):
                    curl = (hy[i, j] - hy[i - 1, j]) * rdx - (hx[i, j] - hx[i, j - 1]) * rdy
                    _e_cell(ez, jp, mat, ca, cb, cj, ka, kb, i, j, curl)
                for j in range(jhi, ny - 1):
                    dhy = (hy[i, j] - hy[i - 1, j]) * rdx
                    dhx = (hx[i, j] - hx[i, j - 1]) * rdy
                    curl = dhy - dhx * iky_e[j]
                    p = by_e[j] * psi_ez_y[i, j] + ay_e[j] * dhx
                    psi_ez_y[i, j] = p
                    curl = curl - p
                    _e_cell(ez, jp, mat, ca, cb, cj, ka, kb, i, j, curl)


def pennes_step(const double[:, ::1] t, double[:, ::1] out,
                const double[:, ::1] gx, const double[:, ::1] gy,
                const double[:, ::1] coef, const double[:, ::1] src,
                const double[:, ::1] perf, double blood_temp,
                const unsigned char[:, ::1] active,
                const unsigned char[:, ::1] monitor):
    """One explicit step; returns the largest |change| over monitored cells."""
    cdef Py_ssize_t nx = t.shape[0], ny = t.shape[1]
    cdef Py_ssize_t i, j
    cdef double tc, div, dt_change, worst = 0.0
    with nogil:
        for i in range(nx):
            for j in range(ny):
                tc = t[i, j]
                if not active[i, j]:
                    out[i, j] = tc
                    continue
                div = 0.0
                if i > 0:
                    div = div + gx[i - 1, j] * (t[i - 1, j] - tc)
                if i < nx - 1:
                    div = div + gx[i, j] * (t[i + 1, j] - tc)
                if j > 0:
                    div = div + gy[i, j - 1] * (t[i, j - 1] - tc)
                if j < ny - 1:
                    div = div + gy[i, j] * (t[i, j + 1] - tc)
                dt_change = coef[i, j] * (div + src[i, j] - perf[i, j] * (tc - blood_temp))
                out[i, j] = tc + dt_change
                if monitor[i, j] and fabs(dt_change) > worst:
                    worst = fabs(dt_change)
    return worst
