# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, fabs, fmod, INFINITY, floor

cnp.import_array()



def _bytes(mask):
    """Boolean mask as a uint8 view (no copy when already contiguous bool)."""
    return np.ascontiguousarray(mask, dtype=bool).view(np.uint8)

def fps(points, Py_ssize_t m):
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"fps: need 1 <= m <= n, got m={m}, n={n}")
    out_arr = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    mind_arr = np.full(n, INFINITY)
    cdef double[::1] mind = mind_arr
    cdef Py_ssize_t i, j, cur = 0, best
    cdef double cx, cy, cz, dx, dy, dz, d, bestd
    with nogil:
        for i in range(m):
            out[i] = cur
            cx = p[cur, 0]; cy = p[cur, 1]; cz = p[cur, 2]
            best = 0
            bestd = -INFINITY
            for j in range(n):
                dx = p[j, 0] - cx; dy = p[j, 1] - cy; dz = p[j, 2] - cz
                d = dx * dx + dy * dy + dz * dz
                if d < mind[j]:
                    mind[j] = d
                if j == cur:
                    mind[j] = -1.0
                if mind[j] > bestd:
                    bestd = mind[j]
                    best = j
            cur = best
    return out_arr


def ball_query(points, centers, double radius):
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = p.shape[0], m = c.shape[0], i, j, cnt = 0, cap = max(16, m * 8)
    offsets_arr = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] offsets = offsets_arr
    buf_arr = np.empty(cap, dtype=np.int64)
    cdef cnp.int64_t[::1] buf = buf_arr
    cdef double dx, dy, dz, cx, cy, cz
    for i in range(m):
        cx = c[i, 0]; cy = c[i, 1]; cz = c[i, 2]
        for j in range(n):
            dx = p[j, 0] - cx; dy = p[j, 1] - cy; dz = p[j, 2] - cz
            if sqrt(dx * dx + dy * dy + dz * dz) <= radius:
                if cnt == cap:
                    cap *= 2
                    buf_arr = np.resize(buf_arr, cap)
                    buf = buf_arr
                buf[cnt] = j
                cnt += 1
        offsets[i + 1] = cnt
    return offsets_arr, buf_arr[:cnt].copy()


def sample_grid(valid, Py_ssize_t sv, Py_ssize_t su, Py_ssize_t ov, Py_ssize_t ou):
    cdef cnp.uint8_t[:, ::1] val = _bytes(valid)
    cdef Py_ssize_t H = val.shape[0], W = val.shape[1]
    cdef Py_ssize_t Hc = H // sv, Wc = W // su, i, j, t, nc = sv * su
    # cell offsets by (squared distance to the anchor, row-major position)
    dv, du = np.meshgrid(np.arange(sv) - ov, np.arange(su) - ou, indexing="ij")
    d2 = (dv * dv + du * du).ravel()
    order = np.lexsort((np.arange(nc), d2))
    cdef cnp.int64_t[::1] oa = np.ascontiguousarray(order // su, dtype=np.int64)
    cdef cnp.int64_t[::1] ob = np.ascontiguousarray(order % su, dtype=np.int64)
    cv_arr = np.empty((Hc, Wc), dtype=np.int64)
    cu_arr = np.empty((Hc, Wc), dtype=np.int64)
    ok_arr = np.zeros((Hc, Wc), dtype=bool)
    cdef cnp.int64_t[:, ::1] cv = cv_arr
    cdef cnp.int64_t[:, ::1] cu = cu_arr
    cdef cnp.uint8_t[:, ::1] ok = ok_arr.view(np.uint8)
    with nogil:
        for i in range(Hc):
            for j in range(Wc):
                cv[i, j] = i * sv + ov
                cu[i, j] = j * su + ou
                for t in range(nc):
                    if val[i * sv + oa[t], j * su + ob[t]]:
                        ok[i, j] = 1
                        cv[i, j] = i * sv + oa[t]
                        cu[i, j] = j * su + ob[t]
                        break
    return cv_arr, cu_arr, ok_arr


def window_index(Py_ssize_t H, Py_ssize_t W, valid, cv_in, cu_in, ok_in,
                 Py_ssize_t k, Py_ssize_t dv, Py_ssize_t du):
    cdef cnp.uint8_t[:, ::1] val = _bytes(valid)
    cdef cnp.int64_t[:, ::1] cv = np.ascontiguousarray(cv_in, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cu = np.ascontiguousarray(cu_in, dtype=np.int64)
    cdef cnp.uint8_t[:, ::1] ok = _bytes(ok_in)
    cdef Py_ssize_t Hc = cv.shape[0], Wc = cv.shape[1], i, j, a, b, s, r, c, half = k // 2
    index_arr = np.empty((Hc, Wc, k * k), dtype=np.int64)
    sval_arr = np.zeros((Hc, Wc, k * k), dtype=bool)
    cdef cnp.int64_t[:, :, ::1] index = index_arr
    cdef cnp.uint8_t[:, :, ::1] sval = sval_arr.view(np.uint8)
    with nogil:
        for i in range(Hc):
            for j in range(Wc):
                s = 0
                for a in range(k):
                    r = cv[i, j] + (a - half) * dv
                    for b in range(k):
                        c = (cu[i, j] + (b - half) * du) % W
                        if c < 0:
                            c = c + W
                        if r < 0:
                            index[i, j, s] = c
                        elif r >= H:
                            index[i, j, s] = (H - 1) * W + c
                        else:
                            index[i, j, s] = r * W + c
                            sval[i, j, s] = ok[i, j] and val[r, c]
                        s += 1
    return index_arr, sval_arr


def localize(xyz_flat, slot_index, slot_valid, center_index, double radius):
    cdef double[:, ::1] xyz = np.ascontiguousarray(xyz_flat, dtype=np.float64)
    cdef cnp.int64_t[:, :, ::1] index = np.ascontiguousarray(slot_index, dtype=np.int64)
    cdef cnp.uint8_t[:, :, ::1] sval = _bytes(slot_valid)
    cdef cnp.int64_t[:, ::1] cidx = np.ascontiguousarray(center_index, dtype=np.int64)
    cdef Py_ssize_t Hc = index.shape[0], Wc = index.shape[1], K = index.shape[2], i, j, s, q, c
    P_arr = np.zeros((Hc, Wc, K, 3))
    dist_arr = np.zeros((Hc, Wc, K))
    mask_arr = np.zeros((Hc, Wc, K), dtype=bool)
    cdef double[:, :, :, ::1] P = P_arr
    cdef double[:, :, ::1] dist = dist_arr
    cdef cnp.uint8_t[:, :, ::1] mask = mask_arr.view(np.uint8)
    cdef double px, py, pz, d
    with nogil:
        for i in range(Hc):
            for j in range(Wc):
                c = cidx[i, j]
                for s in range(K):
                    if not sval[i, j, s]:
                        continue
                    q = index[i, j, s]
                    px = xyz[q, 0] - xyz[c, 0]
                    py = xyz[q, 1] - xyz[c, 1]
                    pz = xyz[q, 2] - xyz[c, 2]
                    P[i, j, s, 0] = px
                    P[i, j, s, 1] = py
                    P[i, j, s, 2] = pz
                    d = sqrt(px * px + py * py + pz * pz)
                    dist[i, j, s] = d
                    mask[i, j, s] = d <= radius
    return P_arr, dist_arr, mask_arr


cdef inline double _coldist(double pu, double cj, double Wc) nogil:
    cdef double d = fmod(fabs(pu - cj), Wc)
    if Wc - d < d:
        return Wc - d
    return d


def nearest_coarse(fine_v, fine_u, ok_in, Py_ssize_t sv, Py_ssize_t su, Py_ssize_t ov, Py_ssize_t ou):
    cdef cnp.int64_t[::1] fv = np.ascontiguousarray(fine_v, dtype=np.int64)
    cdef cnp.int64_t[::1] fu = np.ascontiguousarray(fine_u, dtype=np.int64)
    cdef cnp.uint8_t[:, ::1] ok = _bytes(ok_in)
    cdef Py_ssize_t Hc = ok.shape[0], Wc = ok.shape[1], n = fv.shape[0]
    cdef Py_ssize_t t, R, i, j, jj, ri, rj, best, flat, Rmax = max(Hc, Wc) + 1
    cdef double pv, pu, e, dvv, duu, d2, bestd2
    out_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    with nogil:
        for t in range(n):
            pv = (<double>fv[t] - ov) / sv
            pu = (<double>fu[t] - ou) / su
            ri = <Py_ssize_t>floor(pv + 0.5)
            if ri < 0:
                ri = 0
            if ri > Hc - 1:
                ri = Hc - 1
            rj = <Py_ssize_t>floor(pu + 0.5)
            e = fabs(ri - pv)
            if _coldist(pu, rj, Wc) > e:
                e = _coldist(pu, rj, Wc)
            best = -1
            bestd2 = INFINITY
            for R in range(Rmax):
                if best >= 0 and (R - e) > 0 and (R - e) * (R - e) > bestd2:
                    break
                for i in range(ri - R, ri + R + 1):
                    if i < 0 or i >= Hc:
                        continue
                    for jj in range(rj - R, rj + R + 1):
                        if i != ri - R and i != ri + R and jj != rj - R and jj != rj + R:
                            continue
                        j = jj % Wc
                        if j < 0:
                            j = j + Wc
                        if not ok[i, j]:
                            continue
                        dvv = pv - i
                        duu = _coldist(pu, j, Wc)
                        d2 = dvv * dvv + duu * duu
                        flat = i * Wc + j
                        if d2 < bestd2 or (d2 == bestd2 and flat < best):
                            bestd2 = d2
                            best = flat
            out[t] = best
    return out_arr


def knn_refine(rng_in, valid_in, pred_in, pv_in, pu_in, prange_in, base_in,
               Py_ssize_t w, Py_ssize_t k_post, double sigma, Py_ssize_t n_classes):
    cdef double[:, ::1] rng = np.ascontiguousarray(rng_in, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] val = _bytes(valid_in)
    cdef cnp.int64_t[:, ::1] pred = np.ascontiguousarray(pred_in, dtype=np.int64)
    cdef cnp.int64_t[::1] pv = np.ascontiguousarray(pv_in, dtype=np.int64)
    cdef cnp.int64_t[::1] pu = np.ascontiguousarray(pu_in, dtype=np.int64)
    cdef double[::1] prange = np.ascontiguousarray(prange_in, dtype=np.float64)
    out_arr = np.array(base_in, dtype=np.int64, copy=True)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t H = rng.shape[0], W = rng.shape[1], n = pv.shape[0]
    cdef Py_ssize_t half = w // 2, t, a, b, r, c, cnt, s, q, sel, cls, bestc
    cdef double g, wgt, bestv, sig2 = 2.0 * sigma * sigma
    gap_arr = np.empty(w * w)
    cls_arr = np.empty(w * w, dtype=np.int64)
    taken_arr = np.empty(w * w, dtype=np.uint8)
    votes_arr = np.empty(n_classes)
    present_arr = np.empty(n_classes, dtype=np.uint8)
    cdef double[::1] gap = gap_arr
    cdef cnp.int64_t[::1] wcls = cls_arr
    cdef cnp.uint8_t[::1] taken = taken_arr
    cdef double[::1] votes = votes_arr
    cdef cnp.uint8_t[::1] present = present_arr
    with nogil:
        for t in range(n):
            cnt = 0
            for a in range(w):
                r = pv[t] + a - half
                if r < 0 or r >= H:
                    continue
                for b in range(w):
                    c = (pu[t] + b - half) % W
                    if c < 0:
                        c = c + W
                    if not val[r, c]:
                        continue
                    gap[cnt] = fabs(rng[r, c] - prange[t])
                    wcls[cnt] = pred[r, c]
                    taken[cnt] = 0
                    cnt += 1
            if cnt == 0:
                continue
            for q in range(n_classes):
                votes[q] = 0.0
                present[q] = 0
            for q in range(k_post):
                if q >= cnt:
                    break
                sel = -1
                for s in range(cnt):
                    if not taken[s] and (sel < 0 or gap[s] < gap[sel]):
                        sel = s
                taken[sel] = 1
                g = gap[sel]
                wgt = exp(-(g * g) / sig2)
                votes[wcls[sel]] += wgt
                present[wcls[sel]] = 1
            bestv = -1.0
            bestc = -1
            for q in range(n_classes):
                if present[q] and votes[q] > bestv:
                    bestv = votes[q]
                    bestc = q
            cls = out[t]
            if not (0 <= cls < n_classes and present[cls] and votes[cls] == bestv):
                out[t] = bestc
    return out_arr
