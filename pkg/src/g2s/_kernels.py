"""Compiled inner loops for warping and box filtering.

Inputs are C-contiguous float64 arrays with the batch axes already
flattened into one leading axis.
"""

import numba
import numpy as np

_jit = numba.njit(cache=True, fastmath=False, nogil=True)


@_jit
def warp_forward(src, depth, R, t, fx, fy, cx, cy):
    N, H, W, C = src.shape
    image = np.zeros((N, H, W, C))
    valid = np.zeros((N, H, W), dtype=np.bool_)
    us = np.full((N, H, W), np.nan)
    vs = np.full((N, H, W), np.nan)
    dq = np.zeros((N, H, W, C, 3))
    for n in range(N):
        r = R[n]
        for y in range(H):
            ry = (y - cy) / fy
            for x in range(W):
                rx = (x - cx) / fx
                d = depth[n, y, x]
                px = rx * d
                py = ry * d
                pz = d
                qx = r[0, 0] * px + r[0, 1] * py + r[0, 2] * pz + t[n, 0]
                qy = r[1, 0] * px + r[1, 1] * py + r[1, 2] * pz + t[n, 1]
                qz = r[2, 0] * px + r[2, 1] * py + r[2, 2] * pz + t[n, 2]
                if not (qz > 0.0):
                    continue
                iz = 1.0 / qz
                u = fx * qx * iz + cx
                v = fy * qy * iz + cy
                if not (u >= 0.0 and u <= W - 1 and v >= 0.0 and v <= H - 1):
                    continue
                valid[n, y, x] = True
                us[n, y, x] = u
                vs[n, y, x] = v
                u0 = min(int(np.floor(u)), W - 2)
                v0 = min(int(np.floor(v)), H - 2)
                fu = u - u0
                fv = v - v0
                du_dqx = fx * iz
                du_dqz = -fx * qx * iz * iz
                dv_dqy = fy * iz
                dv_dqz = -fy * qy * iz * iz
                for c in range(C):
                    i00 = src[n, v0, u0, c]
                    i01 = src[n, v0, u0 + 1, c]
                    i10 = src[n, v0 + 1, u0, c]
                    i11 = src[n, v0 + 1, u0 + 1, c]
                    top = i00 + fu * (i01 - i00)
                    bot = i10 + fu * (i11 - i10)
                    image[n, y, x, c] = top + fv * (bot - top)
                    su = (1.0 - fv) * (i01 - i00) + fv * (i11 - i10)
                    sv = bot - top
                    dq[n, y, x, c, 0] = su * du_dqx
                    dq[n, y, x, c, 1] = sv * dv_dqy
                    dq[n, y, x, c, 2] = su * du_dqz + sv * dv_dqz
    return image, valid, us, vs, dq


@_jit
def warp_backward(grad, dq, depth, R, fx, fy, cx, cy):
    """Returns (dL/d depth (N,H,W), dL/dR (N,3,3), dL/dt (N,3))."""
    N, H, W, C = grad.shape
    g_depth = np.zeros((N, H, W))
    g_R = np.zeros((N, 3, 3))
    g_t = np.zeros((N, 3))
    for n in range(N):
        r = R[n]
        for y in range(H):
            ry = (y - cy) / fy
            for x in range(W):
                gx = 0.0
                gy = 0.0
                gz = 0.0
                for c in range(C):
                    g = grad[n, y, x, c]
                    gx += g * dq[n, y, x, c, 0]
                    gy += g * dq[n, y, x, c, 1]
                    gz += g * dq[n, y, x, c, 2]
                if gx == 0.0 and gy == 0.0 and gz == 0.0:
                    continue
                rx = (x - cx) / fx
                d = depth[n, y, x]
                g_depth[n, y, x] = (gx * (r[0, 0] * rx + r[0, 1] * ry + r[0, 2])
                                    + gy * (r[1, 0] * rx + r[1, 1] * ry + r[1, 2])
                                    + gz * (r[2, 0] * rx + r[2, 1] * ry + r[2, 2]))
                p0 = rx * d
                p1 = ry * d
                g_R[n, 0, 0] += gx * p0
                g_R[n, 0, 1] += gx * p1
                g_R[n, 0, 2] += gx * d
                g_R[n, 1, 0] += gy * p0
                g_R[n, 1, 1] += gy * p1
                g_R[n, 1, 2] += gy * d
                g_R[n, 2, 0] += gz * p0
                g_R[n, 2, 1] += gz * p1
                g_R[n, 2, 2] += gz * d
                g_t[n, 0] += gx
                g_t[n, 1] += gy
                g_t[n, 2] += gz
    return g_depth, g_R, g_t


@_jit
def _reflect(i, n):
    if i < 0:
        return -i
    if i >= n:
        return 2 * n - 2 - i
    return i


@_jit
def box3(x):
    N, H, W, C = x.shape
    out = np.empty_like(x)
    for n in range(N):
        for y in range(H):
            y0 = _reflect(y - 1, H)
            y2 = _reflect(y + 1, H)
            for xx in range(W):
                x0 = _reflect(xx - 1, W)
                x2 = _reflect(xx + 1, W)
                for c in range(C):
                    s = (x[n, y0, x0, c] + x[n, y0, xx, c] + x[n, y0, x2, c]
                         + x[n, y, x0, c] + x[n, y, xx, c] + x[n, y, x2, c]
                         + x[n, y2, x0, c] + x[n, y2, xx, c] + x[n, y2, x2, c])
                    out[n, y, xx, c] = s * (1.0 / 9.0)
    return out


@_jit
def box3_adjoint(g):
    N, H, W, C = g.shape
    out = np.zeros_like(g)
    for n in range(N):
        for y in range(H):
            y0 = _reflect(y - 1, H)
            y2 = _reflect(y + 1, H)
            for xx in range(W):
                x0 = _reflect(xx - 1, W)
                x2 = _reflect(xx + 1, W)
                for c in range(C):
                    s = g[n, y, xx, c] * (1.0 / 9.0)
                    out[n, y0, x0, c] += s
                    out[n, y0, xx, c] += s
                    out[n, y0, x2, c] += s
                    out[n, y, x0, c] += s
                    out[n, y, xx, c] += s
                    out[n, y, x2, c] += s
                    out[n, y2, x0, c] += s
                    out[n, y2, xx, c] += s
                    out[n, y2, x2, c] += s
    return out


@_jit
def ssim_forward(x, y, mu_x, var_x, c1, c2):
    """SSIM map plus the partials needed by :func:`ssim_backward`.

    ``coef[0:3]`` hold dS/d mu_y, dS/d E[xy], dS/d E[yy] as image planes.
    """
    mu_y = box3(y)
    e_yy = box3(y * y)
    e_xy = box3(x * y)
    N, H, W, C = x.shape
    S = np.empty_like(x)
    coef = np.empty((3, N, H, W, C))
    for n in range(N):
        for i in range(H):
            for j in range(W):
                for c in range(C):
                    mx = mu_x[n, i, j, c]
                    my = mu_y[n, i, j, c]
                    sy = e_yy[n, i, j, c] - my * my
                    sxy = e_xy[n, i, j, c] - mx * my
                    a1 = 2.0 * mx * my + c1
                    a2 = 2.0 * sxy + c2
                    b1 = mx * mx + my * my + c1
                    b2 = var_x[n, i, j, c] + sy + c2
                    inv_b1 = 1.0 / b1
                    inv_b2 = 1.0 / b2
                    inv_d = inv_b1 * inv_b2
                    s = a1 * a2 * inv_d
                    S[n, i, j, c] = s
                    coef[0, n, i, j, c] = (2.0 * mx * (a2 - a1) * inv_d
                                           + 2.0 * my * s * (inv_b2 - inv_b1))
                    coef[1, n, i, j, c] = 2.0 * a1 * inv_d
                    coef[2, n, i, j, c] = -s * inv_b2
    return S, coef


@_jit
def ssim_backward(x, y, g, coef):
    """Gradient w.r.t. ``y`` of ``sum(g * S)``."""
    N, H, W, C = x.shape
    ga = np.zeros_like(x)
    gb = np.zeros_like(x)
    ge = np.zeros_like(x)
    ninth = 1.0 / 9.0
    for n in range(N):
        for i in range(H):
            i0 = _reflect(i - 1, H)
            i2 = _reflect(i + 1, H)
            for j in range(W):
                j0 = _reflect(j - 1, W)
                j2 = _reflect(j + 1, W)
                for c in range(C):
                    gg = g[n, i, j, c] * ninth
                    if gg == 0.0:
                        continue
                    a = gg * coef[0, n, i, j, c]
                    b = gg * coef[1, n, i, j, c]
                    e = gg * coef[2, n, i, j, c]
                    for ii in (i0, i, i2):
                        for jj in (j0, j, j2):
                            ga[n, ii, jj, c] += a
                            gb[n, ii, jj, c] += b
                            ge[n, ii, jj, c] += e
    out = np.empty_like(x)
    for n in range(N):
        for i in range(H):
            for j in range(W):
                for c in range(C):
                    out[n, i, j, c] = (ga[n, i, j, c] + x[n, i, j, c] * gb[n, i, j, c]
                                       + 2.0 * y[n, i, j, c] * ge[n, i, j, c])
    return out
