"""Numpy implementations of the hot kernels.

Semantics match the compiled ``_ckernels`` module exactly, including tie
breaking and floating-point evaluation order, so either backend can serve
as a drop-in replacement for the other.
"""
from __future__ import annotations

import numpy as np


def fps(points, m):
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"fps: need 1 <= m <= n, got m={m}, n={n}")
    out = np.empty(m, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = 0
    for i in range(m):
        out[i] = cur
        d = points - points[cur]
        d = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        np.minimum(mind, d, out=mind)
        mind[cur] = -1.0  # never re-pick a selected point
        cur = int(np.argmax(mind))
    return out


def ball_query(points, centers, radius):
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    hits = []
    offsets = np.zeros(centers.shape[0] + 1, dtype=np.int64)
    for i, c in enumerate(centers):
        d = points - c
        dist = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
        idx = np.flatnonzero(dist <= radius)
        hits.append(idx)
        offsets[i + 1] = offsets[i] + idx.size
    indices = np.concatenate(hits) if hits else np.zeros(0, dtype=np.int64)
    return offsets, indices.astype(np.int64)


def sample_grid(valid, sv, su, ov, ou):
    valid = np.asarray(valid, dtype=bool)
    H, W = valid.shape
    Hc, Wc = H // sv, W // su
    av = np.arange(Hc)[:, None] * sv + ov
    au = np.arange(Wc)[None, :] * su + ou
    # candidates ordered by (squared distance to anchor, row-major position)
    dv, du = np.meshgrid(np.arange(sv) - ov, np.arange(su) - ou, indexing="ij")
    d2 = (dv * dv + du * du).ravel()
    order = np.lexsort((np.arange(d2.size), d2))
    cells = valid[: Hc * sv, : Wc * su].reshape(Hc, sv, Wc, su).transpose(0, 2, 1, 3).reshape(Hc, Wc, sv * su)
    ranked = cells[:, :, order]
    ok = ranked.any(axis=2)
    first = order[np.argmax(ranked, axis=2)]
    cv = np.where(ok, av - ov + first // su, np.broadcast_to(av, (Hc, Wc)))
    cu = np.where(ok, au - ou + first % su, np.broadcast_to(au, (Hc, Wc)))
    return cv.astype(np.int64), cu.astype(np.int64), ok


def window_index(H, W, valid, cv, cu, ok, k, dv, du):
    valid = np.asarray(valid, dtype=bool)
    half = k // 2
    off_v = (np.arange(k) - half) * dv
    off_u = (np.arange(k) - half) * du
    rows = cv[:, :, None, None] + off_v[None, None, :, None]
    cols = (cu[:, :, None, None] + off_u[None, None, None, :]) % W
    rows, cols = np.broadcast_arrays(rows, cols)
    inside = (rows >= 0) & (rows < H)
    rows = np.clip(rows, 0, H - 1)
    Hc, Wc = cv.shape
    index = (rows * W + cols).reshape(Hc, Wc, k * k)
    svalid = (inside & valid[rows, cols]).reshape(Hc, Wc, k * k) & ok[:, :, None]
    return index.astype(np.int64), svalid


def localize(xyz_flat, slot_index, slot_valid, center_index, radius):
    xyz_flat = np.asarray(xyz_flat, dtype=np.float64)
    nb = xyz_flat[slot_index]
    ctr = xyz_flat[center_index][:, :, None, :]
    P = (nb - ctr) * slot_valid[..., None]
    dist = np.sqrt(P[..., 0] * P[..., 0] + P[..., 1] * P[..., 1] + P[..., 2] * P[..., 2])
    mask = slot_valid & (dist <= radius)
    return P, dist, mask


def nearest_coarse(fine_v, fine_u, ok, sv, su, ov, ou):
    ok = np.asarray(ok, dtype=bool)
    Hc, Wc = ok.shape
    cand = np.flatnonzero(ok.ravel())
    out = np.full(len(fine_v), -1, dtype=np.int64)
    if cand.size == 0 or len(fine_v) == 0:
        return out
    ci = (cand // Wc).astype(np.float64)
    cj = (cand % Wc).astype(np.float64)
    pv = (np.asarray(fine_v, dtype=np.float64) - ov) / sv
    pu = (np.asarray(fine_u, dtype=np.float64) - ou) / su
    chunk = max(1, 4_000_000 // cand.size)
    for s in range(0, len(pv), chunk):
        dvv = pv[s : s + chunk, None] - ci[None, :]
        duu = np.abs(pu[s : s + chunk, None] - cj[None, :]) % Wc
        duu = np.minimum(duu, Wc - duu)
        d2 = dvv * dvv + duu * duu
        out[s : s + chunk] = cand[np.argmin(d2, axis=1)]
    return out


def knn_refine(rng, valid, pix_pred, pv, pu, prange, base, w, k_post, sigma, n_classes):
    rng = np.asarray(rng, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    H, W = rng.shape
    n = len(pv)
    out = np.asarray(base, dtype=np.int64).copy()
    if n == 0:
        return out
    half = w // 2
    off = np.arange(w) - half
    rows = np.asarray(pv)[:, None, None] + off[None, :, None]
    cols = (np.asarray(pu)[:, None, None] + off[None, None, :]) % W
    rows, cols = np.broadcast_arrays(rows, cols)
    inside = (rows >= 0) & (rows < H)
    rows = np.clip(rows, 0, H - 1)
    rows, cols, inside = rows.reshape(n, -1), cols.reshape(n, -1), inside.reshape(n, -1)
    ok = inside & valid[rows, cols]
    gap = np.abs(rng[rows, cols] - np.asarray(prange)[:, None])
    gap = np.where(ok, gap, np.inf)
    order = np.argsort(gap, axis=1, kind="stable")[:, :k_post]
    gap_k = np.take_along_axis(gap, order, axis=1)
    cls_k = pix_pred[rows, cols]
    cls_k = np.take_along_axis(cls_k, order, axis=1)
    used = np.isfinite(gap_k)
    votes = np.zeros((n, n_classes))
    ar = np.arange(n)
    for r in range(order.shape[1]):
        g = np.where(used[:, r], gap_k[:, r], 0.0)
        wgt = np.where(used[:, r], np.exp(-(g * g) / (2.0 * sigma * sigma)), 0.0)
        votes[ar, np.where(used[:, r], cls_k[:, r], 0)] += wgt
    best = votes.max(axis=1)
    any_used = used.any(axis=1)
    tied = (votes == best[:, None]) & _present_classes(cls_k, used, n_classes)
    base_tied = tied[ar, out]
    lowest = np.argmax(tied, axis=1)
    refined = np.where(base_tied, out, lowest)
    return np.where(any_used, refined, out)


def _present_classes(cls_k, used, n_classes):
    present = np.zeros((cls_k.shape[0], n_classes), dtype=bool)
    rr = np.repeat(np.arange(cls_k.shape[0]), cls_k.shape[1])
    present[rr[used.ravel()], cls_k.ravel()[used.ravel()]] = True
    return present
