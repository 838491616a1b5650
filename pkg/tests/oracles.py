"""Independent reference computations used by the test-suite.

Nothing in here touches autograd or the package's own geometry/matching code,
so the checks built on top of it are genuinely two-route.
"""
import itertools

import numpy as np


def central_difference(fn, x, h=1e-6):
    """Numerical gradient of a scalar function of a float64 array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-10):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def rasterized_giou(a, b, res=512):
    """GIoU of two corner boxes in [0, 1]^2 from pixel-centre counting."""
    centers = (np.arange(res) + 0.5) / res
    xs, ys = np.meshgrid(centers, centers, indexing="xy")

    def mask(box):
        return (xs >= box[0]) & (xs < box[2]) & (ys >= box[1]) & (ys < box[3])

    ma, mb = mask(a), mask(b)
    inter = np.logical_and(ma, mb).sum()
    union = np.logical_or(ma, mb).sum()
    enclose = mask([min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])]).sum()
    iou = inter / union
    return iou - (enclose - union) / enclose


def brute_force_assignment(cost):
    """Minimum-cost injective row->column assignment by enumeration.

    Returns (total, sorted list of (row, col) pairs).
    """
    cost = np.asarray(cost)
    n, m = cost.shape
    best, best_pairs = np.inf, None
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            total = cost[np.arange(n), list(cols)].sum()
            if total < best:
                best, best_pairs = total, list(zip(range(n), cols))
    else:
        for rows in itertools.permutations(range(n), m):
            total = cost[list(rows), np.arange(m)].sum()
            if total < best:
                best, best_pairs = total, list(zip(rows, range(m)))
    return best, sorted(best_pairs)


def np_giou(a, b):
    """Plain-float GIoU on corner boxes, written independently of torch."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    ex = max(a[2], b[2]) - min(a[0], b[0])
    ey = max(a[3], b[3]) - min(a[1], b[1])
    enclose = ex * ey
    return inter / union - (enclose - union) / enclose
