"""Pure numpy versions of the compiled geometry kernels.

Used when the extension is not built, or when ``MINMAXDRIVE_PURE=1``.
Boxes are rows ``(x, y, yaw, length, width)``.
"""
import numpy as np

BACKEND = "python"


def _sat_rows(a, b):
    ca, sa = np.cos(a[:, 2]), np.sin(a[:, 2])
    cb, sb = np.cos(b[:, 2]), np.sin(b[:, 2])
    dx = b[:, 0] - a[:, 0]
    dy = b[:, 1] - a[:, 1]
    hal, haw = 0.5 * a[:, 3], 0.5 * a[:, 4]
    hbl, hbw = 0.5 * b[:, 3], 0.5 * b[:, 4]
    ok = np.ones(a.shape[0], dtype=bool)
    for px, py in ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb)):
        ra = hal * np.abs(ca * px + sa * py) + haw * np.abs(-sa * px + ca * py)
        rb = hbl * np.abs(cb * px + sb * py) + hbw * np.abs(-sb * px + cb * py)
        ok &= ~(np.abs(dx * px + dy * py) > ra + rb)
    return ok


def sat_overlap_pairs(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 5)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 5)
    return _sat_rows(a, b)


def sat_overlap_one_many(a, boxes):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
    if boxes.shape[0] == 0:
        return False
    rep = np.broadcast_to(np.asarray(a, dtype=np.float64), boxes.shape)
    return bool(_sat_rows(rep, boxes).any())


def first_overlap(ego, adv, el, ew, al, aw):
    n = min(len(ego), len(adv))
    if n == 0:
        return -1
    a = np.empty((n, 5))
    a[:, :3] = ego[:n]
    a[:, 3], a[:, 4] = el, ew
    b = np.empty((n, 5))
    b[:, :3] = adv[:n]
    b[:, 3], b[:, 4] = al, aw
    hits = np.flatnonzero(_sat_rows(a, b))
    return int(hits[0]) if hits.size else -1


def ray_cast_boxes(ox, oy, angles, max_range, boxes):
    angles = np.asarray(angles, dtype=np.float64)
    out = np.full(angles.shape[0], float(max_range))
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
    if boxes.shape[0] == 0:
        return out
    dxw = np.cos(angles)[:, None]
    dyw = np.sin(angles)[:, None]
    c = np.cos(boxes[:, 2])[None, :]
    s = np.sin(boxes[:, 2])[None, :]
    hl = 0.5 * boxes[:, 3][None, :]
    hw = 0.5 * boxes[:, 4][None, :]
    rx = ox - boxes[:, 0][None, :]
    ry = oy - boxes[:, 1][None, :]
    lx = rx * c + ry * s
    ly = -rx * s + ry * c
    ldx = dxw * c + dyw * s
    ldy = -dxw * s + dyw * c

    def slab(lo, hi, p, d):
        par = np.abs(d) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - p) / np.where(par, 1.0, d)
            tb = (hi - p) / np.where(par, 1.0, d)
        t0 = np.where(par, -np.inf, np.minimum(ta, tb))
        t1 = np.where(par, np.inf, np.maximum(ta, tb))
        miss = par & ((p < lo) | (p > hi))
        return t0, t1, miss

    x0, x1, mx = slab(-hl, hl, lx, ldx)
    y0, y1, my = slab(-hw, hw, ly, ldy)
    tmin = np.maximum(x0, y0)
    tmax = np.minimum(x1, y1)
    valid = ~mx & ~my & ~(tmax < tmin) & ~(tmax < 0.0)
    hit = np.where(tmin >= 0.0, tmin, tmax)
    hit = np.where(valid, hit, np.inf)
    return np.minimum(out, hit.min(axis=1))


def frenet_project_points(pts, poly, cum):
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    a = poly[:-1]
    e = poly[1:] - a
    l2 = (e * e).sum(axis=1)
    rx = pts[:, 0][:, None] - a[:, 0][None, :]
    ry = pts[:, 1][:, None] - a[:, 1][None, :]
    t = np.clip((rx * e[:, 0] + ry * e[:, 1]) / l2, 0.0, 1.0)
    qx = a[:, 0] + t * e[:, 0] - pts[:, 0][:, None]
    qy = a[:, 1] + t * e[:, 1] - pts[:, 1][:, None]
    d2 = qx * qx + qy * qy
    k = np.argmin(d2, axis=1)
    rows = np.arange(pts.shape[0])
    tb = t[rows, k]
    ex, ey = e[k, 0], e[k, 1]
    ax, ay = a[k, 0], a[k, 1]
    cross = ex * (pts[:, 1] - (ay + tb * ey)) - ey * (pts[:, 0] - (ax + tb * ex))
    dist = np.sqrt(d2[rows, k])
    out = np.empty((pts.shape[0], 2))
    out[:, 0] = cum[k] + tb * (cum[k + 1] - cum[k])
    out[:, 1] = np.where(cross >= 0.0, dist, -dist)
    return out
