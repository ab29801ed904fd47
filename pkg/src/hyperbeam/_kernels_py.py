"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same arithmetic order where it matters; used when the
extension is not built or ``HYPERBEAM_PURE_PYTHON=1`` is set.
"""

import numpy as np


def update_h(ez, hx, hy, ch, rdx, rdy, ikx_h, iky_h, bx_h, ax_h, by_h, ay_h,
             pmlx_h, pmly_h, psi_hy_x, psi_hx_y):
    ny = ez.shape[1]
    dy = (ez[:, 1:] - ez[:, :-1]) * rdy
    upd = dy * iky_h[: ny - 1]
    jy = np.flatnonzero(pmly_h[: ny - 1])
    if jy.size:
        p = by_h[jy] * psi_hx_y[:, jy] + ay_h[jy] * dy[:, jy]
        psi_hx_y[:, jy] = p
        upd[:, jy] += p
    hx[:, :-1] -= ch * upd

    nx = ez.shape[0]
    dx = (ez[1:, :] - ez[:-1, :]) * rdx
    upd = dx * ikx_h[: nx - 1, None]
    ix = np.flatnonzero(pmlx_h[: nx - 1])
    if ix.size:
        p = bx_h[ix, None] * psi_hy_x[ix, :] + ax_h[ix, None] * dx[ix, :]
        psi_hy_x[ix, :] = p
        upd[ix, :] += p
    hy[:-1, :] += ch * upd


def update_e(ez, jp, hx, hy, mat, ca, cb, cj, ka, kb, rdx, rdy,
             ikx_e, iky_e, bx_e, ax_e, by_e, ay_e, pmlx_e, pmly_e,
             psi_ez_x, psi_ez_y):
    nx, ny = ez.shape
    inner = (slice(1, nx - 1), slice(1, ny - 1))
    dhy = (hy[1:-1, 1:-1] - hy[:-2, 1:-1]) * rdx
    dhx = (hx[1:-1, 1:-1] - hx[1:-1, :-2]) * rdy
    curl = dhy * ikx_e[1:-1, None] - dhx * iky_e[None, 1:-1]

    ix = np.flatnonzero(pmlx_e[1:-1])
    if ix.size:
        p = bx_e[ix + 1, None] * psi_ez_x[ix + 1, 1:-1] + ax_e[ix + 1, None] * dhy[ix, :]
        psi_ez_x[ix + 1, 1:-1] = p
        curl[ix, :] += p
    jy = np.flatnonzero(pmly_e[1:-1])
    if jy.size:
        p = by_e[None, jy + 1] * psi_ez_y[1:-1, jy + 1] + ay_e[None, jy + 1] * dhx[:, jy]
        psi_ez_y[1:-1, jy + 1] = p
        curl[:, jy] -= p

    m = mat[inner]
    e0 = ez[inner].copy()
    j0 = jp[inner]
    e1 = ca[m] * e0 + cb[m] * curl - cj[m] * j0
    jp[inner] = ka[m] * j0 + kb[m] * (e1 - e0)
    ez[inner] = e1


def pennes_step(t, out, gx, gy, coef, src, perf, blood_temp, active, monitor):
    div = np.zeros_like(t)
    d = gx * (t[1:, :] - t[:-1, :])
    div[:-1, :] += d
    div[1:, :] -= d
    d = gy * (t[:, 1:] - t[:, :-1])
    div[:, :-1] += d
    div[:, 1:] -= d
    change = coef * (div + src - perf * (t - blood_temp))
    act = active.astype(bool)
    change[~act] = 0.0
    np.add(t, change, out=out)
    mon = act & monitor.astype(bool)
    return float(np.abs(change[mon]).max()) if mon.any() else 0.0
