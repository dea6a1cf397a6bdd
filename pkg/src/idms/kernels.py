"""Hot numeric kernels, each with a numba and a numpy implementation.

The two paths evaluate the same arithmetic in the same order wherever
practical, so their outputs agree to rounding.  The public names at the
bottom of the module dispatch on ``idms._accel.USE_NUMBA``.

Matrices are float64 with NaN marking a missing entry.
"""
import numpy as np

from ._accel import njit, select

# Absolute slack (ms) on every triangle comparison.  Without it, float
# rounding on near-collinear Euclidean predictions can fabricate violations.
TIV_EPS = 1e-9


# --------------------------------------------------------------------------
# triangle inequality violations
# --------------------------------------------------------------------------

@njit(cache=True)
def _tiv_triple_counts_nb(ref, est, margin):
    n = ref.shape[0]
    lim = margin + TIV_EPS
    n_ref = 0
    n_est = 0
    n_both = 0
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            rab = ref[a, b]
            eab = est[a, b]
            for c in range(n):
                if c == a or c == b:
                    continue
                hit_r = rab > ref[a, c] + ref[c, b] + lim
                hit_e = eab > est[a, c] + est[c, b] + lim
                if hit_r:
                    n_ref += 1
                if hit_e:
                    n_est += 1
                if hit_r and hit_e:
                    n_both += 1
    return n_ref, n_est, n_both


def _tiv_triple_counts_np(ref, est, margin):
    n = ref.shape[0]
    lim = margin + TIV_EPS
    off = ~np.eye(n, dtype=bool)
    n_ref = n_est = n_both = 0
    for c in range(n):
        keep = off.copy()
        keep[c, :] = False
        keep[:, c] = False
        hit_r = (ref > ref[:, c:c + 1] + ref[c:c + 1, :] + lim) & keep
        hit_e = (est > est[:, c:c + 1] + est[c:c + 1, :] + lim) & keep
        n_ref += int(hit_r.sum())
        n_est += int(hit_e.sum())
        n_both += int((hit_r & hit_e).sum())
    return n_ref, n_est, n_both


@njit(cache=True)
def _tiv_edge_mask_nb(m, margin):
    n = m.shape[0]
    lim = margin + TIV_EPS
    out = np.zeros((n, n), dtype=np.bool_)
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            mab = m[a, b]
            for c in range(n):
                if c == a or c == b:
                    continue
                if mab > m[a, c] + m[c, b] + lim:
                    out[a, b] = True
                    break
    return out


def _tiv_edge_mask_np(m, margin):
    n = m.shape[0]
    lim = margin + TIV_EPS
    out = np.zeros((n, n), dtype=bool)
    for c in range(n):
        hit = m > m[:, c:c + 1] + m[c:c + 1, :] + lim
        hit[c, :] = False
        hit[:, c] = False
        out |= hit
    np.fill_diagonal(out, False)
    return out


@njit(cache=True)
def _tiv_triples_nb(m, margin):
    n = m.shape[0]
    lim = margin + TIV_EPS
    count = 0
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            for c in range(n):
                if c != a and c != b and m[a, b] > m[a, c] + m[c, b] + lim:
                    count += 1
    ia = np.empty(count, dtype=np.int64)
    ib = np.empty(count, dtype=np.int64)
    ic = np.empty(count, dtype=np.int64)
    gain = np.empty(count, dtype=np.float64)
    k = 0
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            for c in range(n):
                if c != a and c != b and m[a, b] > m[a, c] + m[c, b] + lim:
                    ia[k] = a
                    ib[k] = b
                    ic[k] = c
                    gain[k] = m[a, b] - m[a, c] - m[c, b] - margin
                    k += 1
    return ia, ib, ic, gain


def _tiv_triples_np(m, margin):
    n = m.shape[0]
    lim = margin + TIV_EPS
    parts = []
    for c in range(n):
        hit = m > m[:, c:c + 1] + m[c:c + 1, :] + lim
        hit[c, :] = False
        hit[:, c] = False
        np.fill_diagonal(hit, False)
        a, b = np.nonzero(hit)
        if a.size:
            g = m[a, b] - m[a, c] - m[c, b] - margin
            parts.append((a, b, np.full(a.size, c), g))
    if not parts:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy(), np.empty(0)
    ia = np.concatenate([p[0] for p in parts]).astype(np.int64)
    ib = np.concatenate([p[1] for p in parts]).astype(np.int64)
    ic = np.concatenate([p[2] for p in parts]).astype(np.int64)
    gain = np.concatenate([p[3] for p in parts])
    order = np.lexsort((ic, ib, ia))
    return ia[order], ib[order], ic[order], gain[order]


# --------------------------------------------------------------------------
# Vivaldi-style spring relaxation (synchronous rounds)
# --------------------------------------------------------------------------

MIN_ERROR = 1e-6
MAX_ERROR = 1.5


@njit(cache=True)
def _vivaldi_nb(rtt, neighbors, pos, err, cc, ce):
    rounds, n, k = neighbors.shape
    dims = pos.shape[1]
    disp = np.zeros((n, dims))
    new_err = np.empty(n)
    for r in range(rounds):
        disp[:, :] = 0.0
        for i in range(n):
            cnt = 0
            err_sum = 0.0
            for s in range(k):
                j = neighbors[r, i, s]
                target = rtt[i, j]
                if not (np.isfinite(target) and target > 0.0):
                    continue
                dist2 = 0.0
                for q in range(dims):
                    dq = pos[i, q] - pos[j, q]
                    dist2 += dq * dq
                dist = np.sqrt(dist2)
                cnt += 1
                err_sum += abs(dist - target) / target
                if dist > 0.0:
                    w = err[i] / (err[i] + err[j])
                    f = cc * w * (target - dist) / dist
                    for q in range(dims):
                        disp[i, q] += f * (pos[i, q] - pos[j, q])
            if cnt > 0:
                for q in range(dims):
                    disp[i, q] /= cnt
                e = (1.0 - ce) * err[i] + ce * (err_sum / cnt)
                new_err[i] = min(max(e, MIN_ERROR), MAX_ERROR)
            else:
                new_err[i] = err[i]
        for i in range(n):
            err[i] = new_err[i]
            for q in range(dims):
                pos[i, q] += disp[i, q]
    return pos, err


def _vivaldi_np(rtt, neighbors, pos, err, cc, ce):
    rounds, n, k = neighbors.shape
    rows = np.arange(n)[:, None]
    for r in range(rounds):
        nb = neighbors[r]
        diff = pos[:, None, :] - pos[nb]
        dist = np.sqrt((diff * diff).sum(axis=2))
        target = rtt[rows, nb]
        with np.errstate(invalid="ignore", divide="ignore"):
            valid = np.isfinite(target) & (target > 0.0)
            cnt = valid.sum(axis=1)
            sample = np.where(valid, np.abs(dist - target) / target, 0.0)
            w = err[:, None] / (err[:, None] + err[nb])
            moving = valid & (dist > 0.0)
            f = np.where(moving, cc * w * (target - dist) / dist, 0.0)
        disp = (f[:, :, None] * diff).sum(axis=1)
        has = cnt > 0
        disp[has] /= cnt[has, None]
        e = (1.0 - ce) * err + ce * (sample.sum(axis=1) / np.maximum(cnt, 1))
        err = np.where(has, np.clip(e, MIN_ERROR, MAX_ERROR), err)
        pos = pos + disp
    return pos, err


# --------------------------------------------------------------------------
# masked, weighted nonnegative factorization: one HALS sweep
# --------------------------------------------------------------------------

@njit(cache=True)
def _hals_half_nb(target, weight, a, b):
    """Exact coordinate minimisation of ``a`` for fixed ``b``."""
    n, d = a.shape
    m = b.shape[0]
    pred = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for f in range(d):
                s += a[i, f] * b[j, f]
            pred[i, j] = s
    for f in range(d):
        for i in range(n):
            num = 0.0
            den = 0.0
            old = a[i, f]
            for j in range(m):
                wij = weight[i, j]
                if wij == 0.0:
                    continue
                bj = b[j, f]
                num += wij * bj * (target[i, j] - pred[i, j] + old * bj)
                den += wij * bj * bj
            if den > 0.0:
                new = num / den
                if new < 0.0:
                    new = 0.0
                if new != old:
                    step = new - old
                    for j in range(m):
                        pred[i, j] += step * b[j, f]
                    a[i, f] = new


@njit(cache=True)
def _hals_sweep_nb(target, weight, out, inn):
    _hals_half_nb(target, weight, out, inn)
    _hals_half_nb(target.T, weight.T, inn, out)


def _hals_half_np(target, weight, a, b):
    pred = a @ b.T
    for f in range(a.shape[1]):
        col = b[:, f]
        old = a[:, f].copy()
        resid = target - pred + np.outer(old, col)
        num = (weight * resid) @ col
        den = weight @ (col * col)
        with np.errstate(invalid="ignore", divide="ignore"):
            new = np.where(den > 0.0, np.maximum(num / den, 0.0), old)
        pred += np.outer(new - old, col)
        a[:, f] = new


def _hals_sweep_np(target, weight, out, inn):
    _hals_half_np(target, weight, out, inn)
    _hals_half_np(target.T, weight.T, inn, out)


def weighted_sq_loss(target, weight, out, inn):
    resid = target - out @ inn.T
    return float((weight * resid * resid).sum())


tiv_triple_counts = select(_tiv_triple_counts_nb, _tiv_triple_counts_np)
tiv_edge_mask = select(_tiv_edge_mask_nb, _tiv_edge_mask_np)
tiv_triples = select(_tiv_triples_nb, _tiv_triples_np)
vivaldi_relax = select(_vivaldi_nb, _vivaldi_np)
hals_sweep = select(_hals_sweep_nb, _hals_sweep_np)

NUMBA_KERNELS = {
    "tiv_triple_counts": _tiv_triple_counts_nb,
    "tiv_edge_mask": _tiv_edge_mask_nb,
    "tiv_triples": _tiv_triples_nb,
    "vivaldi_relax": _vivaldi_nb,
    "hals_sweep": _hals_sweep_nb,
}
NUMPY_KERNELS = {
    "tiv_triple_counts": _tiv_triple_counts_np,
    "tiv_edge_mask": _tiv_edge_mask_np,
    "tiv_triples": _tiv_triples_np,
    "vivaldi_relax": _vivaldi_np,
    "hals_sweep": _hals_sweep_np,
}
