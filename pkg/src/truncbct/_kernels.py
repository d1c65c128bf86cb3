"""Numba kernels for ray marching and voxel-driven backprojection.

Both kernels parallelize over disjoint outputs (one pixel / one voxel per
work item), so results are bit-identical for any thread count.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def march_rays(vol, dx, dy, dz, x0, y0, z0, cos_b, sin_b, sid, sdd,
               n_rows, n_cols, pixel_w, pixel_h, step, out):
    """Line integrals through a trilinearly interpolated volume.

    vol is (nz, ny, nx); (x0, y0, z0) is the first voxel center.  The field is
    zero outside the voxel-center hull with a one-voxel taper (zero-padded
    trilinear border).  out is (n_views, n_rows, n_cols) float32; accumulation
    happens in float64 per ray.
    """
    nz, ny, nx = vol.shape
    n_views = cos_b.shape[0]
    xmin = x0 - dx
    xmax = x0 + nx * dx
    ymin = y0 - dy
    ymax = y0 + ny * dy
    zmin = z0 - dz
    zmax = z0 + nz * dz
    for idx in prange(n_views * n_rows * n_cols):
        iv = idx // (n_rows * n_cols)
        rem = idx - iv * (n_rows * n_cols)
        ir = rem // n_cols
        ic = rem - ir * n_cols
        cb = cos_b[iv]
        sb = sin_b[iv]
        sx = sid * cb
        sy = sid * sb
        sz = 0.0
        u = (ic - (n_cols - 1) * 0.5) * pixel_w
        v = (ir - (n_rows - 1) * 0.5) * pixel_h
        px = (sid - sdd) * cb - u * sb
        py = (sid - sdd) * sb + u * cb
        pz = v
        ddx = px - sx
        ddy = py - sy
        ddz = pz - sz
        norm = np.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
        ddx /= norm
        ddy /= norm
        ddz /= norm

        # clip against the padded bounding box
        t0 = 0.0
        t1 = 1.0e30
        ok = True
        if abs(ddx) > 1e-12:
            ta = (xmin - sx) / ddx
            tb = (xmax - sx) / ddx
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
        elif sx < xmin or sx > xmax:
            ok = False
        if abs(ddy) > 1e-12:
            ta = (ymin - sy) / ddy
            tb = (ymax - sy) / ddy
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
        elif sy < ymin or sy > ymax:
            ok = False
        if abs(ddz) > 1e-12:
            ta = (zmin - sz) / ddz
            tb = (zmax - sz) / ddz
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
        elif sz < zmin or sz > zmax:
            ok = False

        total = 0.0
        if ok and t1 > t0:
            n_steps = int(np.ceil((t1 - t0) / step))
            for k in range(n_steps):
                t = t0 + (k + 0.5) * step
                if t >= t1:
                    break
                fx = (sx + t * ddx - x0) / dx
                fy = (sy + t * ddy - y0) / dy
                fz = (sz + t * ddz - z0) / dz
                i0 = int(np.floor(fx))
                j0 = int(np.floor(fy))
                k0 = int(np.floor(fz))
                wx = fx - i0
                wy = fy - j0
                wz = fz - k0
                if 0 <= i0 and i0 + 1 < nx and 0 <= j0 and j0 + 1 < ny and 0 <= k0 and k0 + 1 < nz:
                    # fully interior: unchecked 8-corner gather
                    c00 = vol[k0, j0, i0] * (1.0 - wx) + vol[k0, j0, i0 + 1] * wx
                    c01 = vol[k0, j0 + 1, i0] * (1.0 - wx) + vol[k0, j0 + 1, i0 + 1] * wx
                    c10 = vol[k0 + 1, j0, i0] * (1.0 - wx) + vol[k0 + 1, j0, i0 + 1] * wx
                    c11 = vol[k0 + 1, j0 + 1, i0] * (1.0 - wx) + vol[k0 + 1, j0 + 1, i0 + 1] * wx
                    total += (c00 * (1.0 - wy) + c01 * wy) * (1.0 - wz) + (c10 * (1.0 - wy) + c11 * wy) * wz
                else:
                    acc = 0.0
                    for di in range(2):
                        ii = i0 + di
                        if ii < 0 or ii >= nx:
                            continue
                        wxi = wx if di == 1 else 1.0 - wx
                        for dj in range(2):
                            jj = j0 + dj
                            if jj < 0 or jj >= ny:
                                continue
                            wyj = wy if dj == 1 else 1.0 - wy
                            for dk in range(2):
                                kk = k0 + dk
                                if kk < 0 or kk >= nz:
                                    continue
                                wzk = wz if dk == 1 else 1.0 - wz
                                acc += wxi * wyj * wzk * vol[kk, jj, ii]
                    total += acc
        out[iv, ir, ic] = total * step


@njit(cache=True, parallel=True)
def backproject_views(proj, cos_b, sin_b, sid, sdd, pixel_w, pixel_h,
                      dx, dy, dz, x0, y0, z0, nx, ny, nz, nearest, out):
    """Distance-weighted cone-beam backprojection onto a voxel grid.

    Accumulates sum over views of (sid^2 / U^2) * detector sample, where
    U = sid - (x*cos + y*sin) is the source-to-voxel distance along the
    central axis.  The caller applies the angular step factor.
    """
    n_views, n_rows, n_cols = proj.shape
    cu = (n_cols - 1) * 0.5
    cv = (n_rows - 1) * 0.5
    for idx in prange(nz * ny):
        kz = idx // ny
        jy = idx - kz * ny
        z = z0 + kz * dz
        y = y0 + jy * dy
        for ix in range(nx):
            x = x0 + ix * dx
            acc = 0.0
            for iv in range(n_views):
                cb = cos_b[iv]
                sb = sin_b[iv]
                U = sid - (x * cb + y * sb)
                if U < 1e-9:
                    continue
                mag = sdd / U
                fc = (-x * sb + y * cb) * mag / pixel_w + cu
                fr = z * mag / pixel_h + cv
                if nearest:
                    ic = int(np.floor(fc + 0.5))
                    ir = int(np.floor(fr + 0.5))
                    if ic < 0 or ic >= n_cols or ir < 0 or ir >= n_rows:
                        continue
                    s = proj[iv, ir, ic]
                else:
                    ic = int(np.floor(fc))
                    ir = int(np.floor(fr))
                    if ic < 0 or ic + 1 >= n_cols or ir < 0 or ir + 1 >= n_rows:
                        continue
                    wc = fc - ic
                    wr = fr - ir
                    s = (1.0 - wr) * ((1.0 - wc) * proj[iv, ir, ic] + wc * proj[iv, ir, ic + 1]) \
                        + wr * ((1.0 - wc) * proj[iv, ir + 1, ic] + wc * proj[iv, ir + 1, ic + 1])
                acc += (sid * sid) / (U * U) * s
            out[kz, jy, ix] = acc
