"""Particle kernels: free Brownian motion sampled at the observation instants.

Diffusion is unbounded and the observers are passive, so a molecule's position
at the next sampling instant is its current position plus one Gaussian
increment of variance ``2 D dt`` per axis, whatever ``dt`` is.  Molecules are
therefore advanced event to event (optionally in sub-steps no longer than
``sim_step``), and every increment is drawn from Philox with counter
``(molecule_id, event_index, trial_index, substep)``.

With ``cull`` on, a molecule whose surface distance to every relevant observer
exceeds ``z * sqrt(2 D dt)`` is not looked at again until ``dt`` has elapsed
(it is assumed outside at the skipped instants), and it is dropped once that
wake-up time is past the last instant of the sequence.

Both kernels write into preallocated arrays, one row per trial:
``rx_counts (n, L, K)``, ``fc_counts (n, L)``, ``fc_by_rx (n, L, K)``.
Receiver decisions are made inside the kernel because they decide which type-B
molecules get released; the FC rule is applied afterwards on the counts.
"""

import math

import numpy as np

from ._accel import njit
from .rng import normals3, normals3_array

SCHEME_SD = 0
SCHEME_MAJORITY = 1
SCHEME_SINGLE = 2

B_ID_BASE = 0x80000000


@njit(inline="always")
def _advance(x, y, z, t_last, t_event, D, mid, event, trial, sim_step, k0, k1):
    span = t_event - t_last
    if span <= 0.0:
        return x, y, z
    n_sub = 1
    if sim_step > 0.0:
        n_sub = max(1, int(math.ceil(span / sim_step - 1e-9)))
    sigma = math.sqrt(2.0 * D * span / n_sub)
    for s in range(n_sub):
        g0, g1, g2 = normals3(np.uint64(mid), np.uint64(event), np.uint64(trial), np.uint64(s), k0, k1)
        x += sigma * g0
        y += sigma * g1
        z += sigma * g2
    return x, y, z


@njit(inline="always")
def _wake_time(x, y, z, centers, radii, t_now, D, zsig):
    dmin = 1e300
    for k in range(centers.shape[0]):
        dx = x - centers[k, 0]
        dy = y - centers[k, 1]
        dz = z - centers[k, 2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz) - radii[k]
        if d < dmin:
            dmin = d
    if dmin <= 0.0:
        return t_now
    return t_now + (dmin / zsig) ** 2 / (2.0 * D)


@njit(nogil=True)
def run_trials_numba(
    trial_ids, bits, k0, k1, tx, rx_c, rx_r, fc_c, fc_r,
    S_A, S_B, D_A, D_B, T, t_trans, dt_rx, M_rx, dt_fc, M_fc,
    xi_rx, scheme, sim_step, cull, zsig, horizon,
    rx_counts, fc_counts, fc_by_rx,
):
    n_trials, L = bits.shape
    K = rx_c.shape[0]
    rx_r2 = rx_r * rx_r
    fc_r2 = fc_r * fc_r
    fc_cs = fc_c.reshape(1, 3)
    fc_rs = np.array([fc_r])
    ev_per_symbol = M_rx + M_fc
    t_end_a = (L - 1) * T + M_rx * dt_rx
    t_end_b = (L - 1) * T + t_trans + M_fc * dt_fc
    cap_a = S_A * L
    cap_b = max(1, int(S_B.sum()) * L)
    ax = np.empty(cap_a); ay = np.empty(cap_a); az = np.empty(cap_a)
    at = np.empty(cap_a); aw = np.empty(cap_a)
    aid = np.empty(cap_a, np.int64); aem = np.empty(cap_a, np.int64)
    bx = np.empty(cap_b); by = np.empty(cap_b); bz = np.empty(cap_b)
    bt = np.empty(cap_b); bw = np.empty(cap_b)
    bid = np.empty(cap_b, np.int64); bem = np.empty(cap_b, np.int64); bsrc = np.empty(cap_b, np.int64)
    dec = np.zeros(K, np.int64)
    for r in range(n_trials):
        trial = trial_ids[r]
        na = 0
        nb = 0
        next_a = 0
        next_b = 0
        for s in range(L):
            t0 = s * T
            # molecules past the cull horizon
            i = 0
            while i < na:
                if s - aem[i] >= horizon:
                    na -= 1
                    ax[i] = ax[na]; ay[i] = ay[na]; az[i] = az[na]; at[i] = at[na]
                    aw[i] = aw[na]; aid[i] = aid[na]; aem[i] = aem[na]
                else:
                    i += 1
            i = 0
            while i < nb:
                if s - bem[i] >= horizon:
                    nb -= 1
                    bx[i] = bx[nb]; by[i] = by[nb]; bz[i] = bz[nb]; bt[i] = bt[nb]
                    bw[i] = bw[nb]; bid[i] = bid[nb]; bem[i] = bem[nb]; bsrc[i] = bsrc[nb]
                else:
                    i += 1
            if bits[r, s]:
                for m in range(S_A):
                    ax[na] = tx[0]; ay[na] = tx[1]; az[na] = tx[2]
                    at[na] = t0; aw[na] = t0; aid[na] = next_a; aem[na] = s
                    na += 1
                    next_a += 1
            for m in range(M_rx):
                te = t0 + (m + 1) * dt_rx
                ev = s * ev_per_symbol + m
                i = 0
                while i < na:
                    if cull and aw[i] > te:
                        i += 1
                        continue
                    x, y, z = _advance(ax[i], ay[i], az[i], at[i], te, D_A, aid[i], ev, trial, sim_step, k0, k1)
                    ax[i] = x; ay[i] = y; az[i] = z; at[i] = te
                    for k in range(K):
                        dx = x - rx_c[k, 0]
                        dy = y - rx_c[k, 1]
                        dz = z - rx_c[k, 2]
                        if dx * dx + dy * dy + dz * dz <= rx_r2[k]:
                            rx_counts[r, s, k] += 1
                    if cull:
                        w = _wake_time(x, y, z, rx_c, rx_r, te, D_A, zsig)
                        if w > t_end_a:
                            na -= 1
                            ax[i] = ax[na]; ay[i] = ay[na]; az[i] = az[na]; at[i] = at[na]
                            aw[i] = aw[na]; aid[i] = aid[na]; aem[i] = aem[na]
                            continue
                        aw[i] = w
                    i += 1
            for k in range(K):
                dec[k] = 1 if rx_counts[r, s, k] >= xi_rx[k] else 0
            if scheme == SCHEME_SINGLE:
                continue
            t_rep = t0 + t_trans
            for k in range(K):
                if dec[k]:
                    for m in range(S_B[k]):
                        bx[nb] = rx_c[k, 0]; by[nb] = rx_c[k, 1]; bz[nb] = rx_c[k, 2]
                        bt[nb] = t_rep; bw[nb] = t_rep; bid[nb] = B_ID_BASE + next_b
                        bem[nb] = s; bsrc[nb] = k
                        nb += 1
                        next_b += 1
            for m in range(M_fc):
                te = t_rep + (m + 1) * dt_fc
                ev = s * ev_per_symbol + M_rx + m
                i = 0
                while i < nb:
                    if cull and bw[i] > te:
                        i += 1
                        continue
                    x, y, z = _advance(bx[i], by[i], bz[i], bt[i], te, D_B, bid[i], ev, trial, sim_step, k0, k1)
                    bx[i] = x; by[i] = y; bz[i] = z; bt[i] = te
                    dx = x - fc_c[0]
                    dy = y - fc_c[1]
                    dz = z - fc_c[2]
                    if dx * dx + dy * dy + dz * dz <= fc_r2:
                        fc_counts[r, s] += 1
                        fc_by_rx[r, s, bsrc[i]] += 1
                    if cull:
                        w = _wake_time(x, y, z, fc_cs, fc_rs, te, D_B, zsig)
                        if w > t_end_b:
                            nb -= 1
                            bx[i] = bx[nb]; by[i] = by[nb]; bz[i] = bz[nb]; bt[i] = bt[nb]
                            bw[i] = bw[nb]; bid[i] = bid[nb]; bem[i] = bem[nb]; bsrc[i] = bsrc[nb]
                            continue
                        bw[i] = w
                    i += 1


def _advance_array(pos, t_last, t_event, D, ids, event, trial, sim_step, key):
    span = t_event - t_last
    if sim_step > 0:
        n_sub = np.maximum(1, np.ceil(span / sim_step - 1e-9).astype(np.int64))
    else:
        n_sub = np.ones(len(ids), dtype=np.int64)
    sigma = np.sqrt(2.0 * D * np.maximum(span, 0.0) / n_sub)
    for s in range(int(n_sub.max()) if len(ids) else 0):
        live = s < n_sub
        g = normals3_array(ids[live], np.uint64(event), np.uint64(trial), np.uint64(s), key)
        pos[live] += sigma[live, None] * g
    return pos


def _wake_array(pos, centers, radii, t_now, D, zsig):
    d = np.linalg.norm(pos[:, None, :] - centers[None, :, :], axis=2) - radii[None, :]
    dmin = d.min(axis=1)
    return np.where(dmin <= 0.0, t_now, t_now + (np.maximum(dmin, 0.0) / zsig) ** 2 / (2.0 * D))


def run_trials_numpy(
    trial_ids, bits, k0, k1, tx, rx_c, rx_r, fc_c, fc_r,
    S_A, S_B, D_A, D_B, T, t_trans, dt_rx, M_rx, dt_fc, M_fc,
    xi_rx, scheme, sim_step, cull, zsig, horizon,
    rx_counts, fc_counts, fc_by_rx,
):
    """Vectorised twin of :func:`run_trials_numba` (same RNG counters, same outputs)."""
    n_trials, L = bits.shape
    K = rx_c.shape[0]
    key = (k0, k1)
    t_end_a = (L - 1) * T + M_rx * dt_rx
    t_end_b = (L - 1) * T + t_trans + M_fc * dt_fc
    fc_cs = np.asarray(fc_c).reshape(1, 3)
    fc_rs = np.array([fc_r])
    for r in range(n_trials):
        trial = int(trial_ids[r])
        a_pos = np.empty((0, 3)); a_t = np.empty(0); a_w = np.empty(0)
        a_id = np.empty(0, np.uint64); a_em = np.empty(0, np.int64)
        b_pos = np.empty((0, 3)); b_t = np.empty(0); b_w = np.empty(0)
        b_id = np.empty(0, np.uint64); b_em = np.empty(0, np.int64); b_src = np.empty(0, np.int64)
        next_a = 0
        next_b = 0
        for s in range(L):
            t0 = s * T
            keep = s - a_em < horizon
            a_pos, a_t, a_w, a_id, a_em = a_pos[keep], a_t[keep], a_w[keep], a_id[keep], a_em[keep]
            keep = s - b_em < horizon
            b_pos, b_t, b_w, b_id, b_em, b_src = b_pos[keep], b_t[keep], b_w[keep], b_id[keep], b_em[keep], b_src[keep]
            if bits[r, s]:
                a_pos = np.vstack([a_pos, np.tile(tx, (S_A, 1))])
                a_t = np.concatenate([a_t, np.full(S_A, t0)])
                a_w = np.concatenate([a_w, np.full(S_A, t0)])
                a_id = np.concatenate([a_id, np.arange(next_a, next_a + S_A, dtype=np.uint64)])
                a_em = np.concatenate([a_em, np.full(S_A, s)])
                next_a += S_A
            for m in range(M_rx):
                te = t0 + (m + 1) * dt_rx
                ev = s * (M_rx + M_fc) + m
                act = a_w <= te if cull else np.ones(len(a_t), bool)
                pos = _advance_array(a_pos[act], a_t[act], te, D_A, a_id[act], ev, trial, sim_step, key)
                a_pos[act] = pos
                a_t[act] = te
                d2 = ((pos[:, None, :] - rx_c[None, :, :]) ** 2).sum(axis=2)
                rx_counts[r, s] += (d2 <= (rx_r**2)[None, :]).sum(axis=0)
                if cull:
                    w = _wake_array(pos, rx_c, rx_r, te, D_A, zsig)
                    a_w[act] = w
                    keep = a_w <= t_end_a
                    a_pos, a_t, a_w, a_id, a_em = a_pos[keep], a_t[keep], a_w[keep], a_id[keep], a_em[keep]
            dec = (rx_counts[r, s] >= xi_rx).astype(np.int64)
            if scheme == SCHEME_SINGLE:
                continue
            t_rep = t0 + t_trans
            for k in range(K):
                if dec[k]:
                    n = int(S_B[k])
                    b_pos = np.vstack([b_pos, np.tile(rx_c[k], (n, 1))])
                    b_t = np.concatenate([b_t, np.full(n, t_rep)])
                    b_w = np.concatenate([b_w, np.full(n, t_rep)])
                    b_id = np.concatenate([b_id, B_ID_BASE + np.arange(next_b, next_b + n, dtype=np.uint64)])
                    b_em = np.concatenate([b_em, np.full(n, s)])
                    b_src = np.concatenate([b_src, np.full(n, k)])
                    next_b += n
            for m in range(M_fc):
                te = t_rep + (m + 1) * dt_fc
                ev = s * (M_rx + M_fc) + M_rx + m
                act = b_w <= te if cull else np.ones(len(b_t), bool)
                pos = _advance_array(b_pos[act], b_t[act], te, D_B, b_id[act], ev, trial, sim_step, key)
                b_pos[act] = pos
                b_t[act] = te
                inside = ((pos - fc_c) ** 2).sum(axis=1) <= fc_r**2
                fc_counts[r, s] += int(inside.sum())
                fc_by_rx[r, s] += np.bincount(b_src[act][inside], minlength=K)
                if cull:
                    b_w[act] = _wake_array(pos, fc_cs, fc_rs, te, D_B, zsig)
                    keep = b_w <= t_end_b
                    b_pos, b_t, b_w, b_id, b_em, b_src = (
                        b_pos[keep], b_t[keep], b_w[keep], b_id[keep], b_em[keep], b_src[keep]
                    )


@njit(nogil=True)
def brownian_step_numba(pos, D, dt, ids, event, trial, k0, k1):
    out = np.empty_like(pos)
    for i in range(pos.shape[0]):
        s = math.sqrt(2.0 * D[i] * dt)
        g0, g1, g2 = normals3(np.uint64(ids[i]), np.uint64(event), np.uint64(trial), np.uint64(0), k0, k1)
        out[i, 0] = pos[i, 0] + s * g0
        out[i, 1] = pos[i, 1] + s * g1
        out[i, 2] = pos[i, 2] + s * g2
    return out


def brownian_step_numpy(pos, D, dt, ids, event, trial, k0, k1):
    g = normals3_array(np.asarray(ids, dtype=np.uint64), np.uint64(event), np.uint64(trial), np.uint64(0), (k0, k1))
    return pos + np.sqrt(2.0 * np.asarray(D) * dt)[:, None] * g
