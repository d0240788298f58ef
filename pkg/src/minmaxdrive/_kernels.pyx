# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels.

Same signatures and semantics as ``_kernels_py``; ``kernels`` picks one at import.
Boxes are rows ``(x, y, yaw, length, width)``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, INFINITY

cnp.import_array()

BACKEND = "cython"


cdef inline bint _sat(double ax, double ay, double ayaw, double al, double aw,
                      double bx, double by, double byaw, double bl, double bw) noexcept nogil:
    cdef double ca = cos(ayaw), sa = sin(ayaw), cb = cos(byaw), sb = sin(byaw)
    cdef double dx = bx - ax, dy = by - ay
    cdef double hal = 0.5 * al, haw = 0.5 * aw, hbl = 0.5 * bl, hbw = 0.5 * bw
    cdef double ux[4]
    cdef double uy[4]
    cdef int k
    cdef double px, py, ra, rb
    ux[0] = ca; uy[0] = sa
    ux[1] = -sa; uy[1] = ca
    ux[2] = cb; uy[2] = sb
    ux[3] = -sb; uy[3] = cb
    for k in range(4):
        px = ux[k]
        py = uy[k]
        ra = hal * fabs(ca * px + sa * py) + haw * fabs(-sa * px + ca * py)
        rb = hbl * fabs(cb * px + sb * py) + hbw * fabs(-sb * px + cb * py)
        if fabs(dx * px + dy * py) > ra + rb:
            return False
    return True


def sat_overlap_pairs(const double[:, ::1] a, const double[:, ::1] b):
    """Row-wise SAT test between two (n, 5) box arrays."""
    cdef Py_ssize_t n = a.shape[0], i
    out = np.zeros(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] o = out
    for i in range(n):
        o[i] = _sat(a[i, 0], a[i, 1], a[i, 2], a[i, 3], a[i, 4],
                    b[i, 0], b[i, 1], b[i, 2], b[i, 3], b[i, 4])
    return out


def sat_overlap_one_many(const double[::1] a, const double[:, ::1] boxes):
    """True if box ``a`` overlaps any row of ``boxes``."""
    cdef Py_ssize_t i
    for i in range(boxes.shape[0]):
        if _sat(a[0], a[1], a[2], a[3], a[4],
                boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3], boxes[i, 4]):
            return True
    return False


def first_overlap(const double[:, ::1] ego, const double[:, ::1] adv,
                  double el, double ew, double al, double aw):
    """Index of the first step where the two pose tracks (n, 3) overlap, or -1."""
    cdef Py_ssize_t n = min(ego.shape[0], adv.shape[0]), i
    for i in range(n):
        if _sat(ego[i, 0], ego[i, 1], ego[i, 2], el, ew,
                adv[i, 0], adv[i, 1], adv[i, 2], al, aw):
            return i
    return -1


def ray_cast_boxes(double ox, double oy, const double[::1] angles, double max_range,
                   const double[:, ::1] boxes):
    """Distance along each world-frame ray angle to the nearest box edge."""
    cdef Py_ssize_t nr = angles.shape[0], nb = boxes.shape[0], i, j
    out = np.full(nr, max_range, dtype=np.float64)
    cdef double[::1] o = out
    cdef double dxw, dyw, c, s, lx, ly, ldx, ldy, hl, hw, t0, t1, tmin, tmax, ta, tb, best, hit
    for i in range(nr):
        dxw = cos(angles[i])
        dyw = sin(angles[i])
        best = max_range
        for j in range(nb):
            c = cos(boxes[j, 2])
            s = sin(boxes[j, 2])
            hl = 0.5 * boxes[j, 3]
            hw = 0.5 * boxes[j, 4]
            lx = (ox - boxes[j, 0]) * c + (oy - boxes[j, 1]) * s
            ly = -(ox - boxes[j, 0]) * s + (oy - boxes[j, 1]) * c
            ldx = dxw * c + dyw * s
            ldy = -dxw * s + dyw * c
            tmin = -INFINITY
            tmax = INFINITY
            if fabs(ldx) < 1e-15:
                if lx < -hl or lx > hl:
                    continue
            else:
                ta = (-hl - lx) / ldx
                tb = (hl - lx) / ldx
                if ta > tb:
                    ta, tb = tb, ta
                tmin = ta
                tmax = tb
            if fabs(ldy) < 1e-15:
                if ly < -hw or ly > hw:
                    continue
            else:
                ta = (-hw - ly) / ldy
                tb = (hw - ly) / ldy
                if ta > tb:
                    ta, tb = tb, ta
                if ta > tmin:
                    tmin = ta
                if tb < tmax:
                    tmax = tb
            if tmax < tmin or tmax < 0.0:
                continue
            hit = tmin if tmin >= 0.0 else tmax
            if hit < best:
                best = hit
        o[i] = best
    return out


def frenet_project_points(const double[:, ::1] pts, const double[:, ::1] poly, const double[::1] cum):
    """Project (n, 2) points onto a polyline; returns (n, 2) array of (s, d)."""
    cdef Py_ssize_t n = pts.shape[0], m = poly.shape[0], i, k, kbest
    out = np.empty((n, 2), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double px, py, ax, ay, ex, ey, l2, t, qx, qy, d2, best, tbest, cross
    for i in range(n):
        px = pts[i, 0]
        py = pts[i, 1]
        best = INFINITY
        kbest = 0
        tbest = 0.0
        for k in range(m - 1):
            ax = poly[k, 0]
            ay = poly[k, 1]
            ex = poly[k + 1, 0] - ax
            ey = poly[k + 1, 1] - ay
            l2 = ex * ex + ey * ey
            t = ((px - ax) * ex + (py - ay) * ey) / l2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            qx = ax + t * ex - px
            qy = ay + t * ey - py
            d2 = qx * qx + qy * qy
            if d2 < best:
                best = d2
                kbest = k
                tbest = t
        ax = poly[kbest, 0]
        ay = poly[kbest, 1]
        ex = poly[kbest + 1, 0] - ax
        ey = poly[kbest + 1, 1] - ay
        cross = ex * (py - (ay + tbest * ey)) - ey * (px - (ax + tbest * ex))
        o[i, 0] = cum[kbest] + tbest * (cum[kbest + 1] - cum[kbest])
        o[i, 1] = sqrt(best) if cross >= 0.0 else -sqrt(best)
    return out
