"""Pure-Python/numpy kernels.

Reference implementation of the hot loops; ``_ckernels.pyx`` mirrors every
function here and must consume the random stream in the same order.
"""
from __future__ import annotations

import math
from bisect import bisect_right

import numpy as np

BACKEND = "python"
UNIFORM_BLOCK = 4096


class BoundViolation(RuntimeError):
    pass


class FeatureCore:
    """Lazily decayed degree / volume / neighbour statistics.

    Every accumulator stores its value at its own last-update time and is
    decayed on read, so an update touches O(1) entries.
    """

    def __init__(self, n_nodes, gamma_deg, gamma_vol, gamma_cn):
        self.n_nodes = int(n_nodes)
        self.gamma_deg = float(gamma_deg)
        self.gamma_vol = float(gamma_vol)
        self.gamma_cn = float(gamma_cn)
        self.clock = -math.inf
        self.deg = [0.0] * self.n_nodes
        self.deg_t = [0.0] * self.n_nodes
        self.vol = {}
        self.nbr = [dict() for _ in range(self.n_nodes)]

    def update(self, u, v, t):
        if t < self.clock:
            raise ValueError(f"out-of-order update at t={t} < clock={self.clock}")
        if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
            raise IndexError("node id out of range")
        g = self.gamma_deg
        for w in (u, v):
            self.deg[w] = self.deg[w] * math.exp(-g * (t - self.deg_t[w])) + 1.0
            self.deg_t[w] = t
        key = u * self.n_nodes + v
        acc = self.vol.get(key)
        if acc is None:
            self.vol[key] = [1.0, t]
        else:
            acc[0] = acc[0] * math.exp(-self.gamma_vol * (t - acc[1])) + 1.0
            acc[1] = t
        self.nbr[u][v] = t
        self.nbr[v][u] = t
        self.clock = t

    def degree(self, u, t):
        if not 0 <= u < self.n_nodes or self.deg[u] == 0.0:
            return 0.0
        return self.deg[u] * math.exp(-self.gamma_deg * (t - self.deg_t[u]))

    def query(self, u, v, t):
        """Return ``(deg_u, deg_v, volume_uv, cn_uv)`` at time ``t``."""
        n = self.n_nodes
        if not (0 <= u < n and 0 <= v < n):
            return (self.degree(u, t), self.degree(v, t), 0.0, 0.0)
        du = self.degree(u, t)
        dv = self.degree(v, t)
        acc = self.vol.get(u * n + v)
        vol = 0.0 if acc is None else acc[0] * math.exp(-self.gamma_vol * (t - acc[1]))
        nu, nv = self.nbr[u], self.nbr[v]
        if len(nu) > len(nv):
            nu, nv = nv, nu
        cn = 0.0
        g = self.gamma_cn
        for w in sorted(nu):
            if w == u or w == v:
                continue
            tw = nu[w]
            tv = nv.get(w)
            if tv is not None:
                cn += math.exp(-g * (t - (tw if tw > tv else tv)))
        return (du, dv, vol, cn)

    def to_state(self):
        vol = sorted((k, a[0], a[1]) for k, a in self.vol.items())
        nbr = [sorted(d.items()) for d in self.nbr]
        return {
            "n_nodes": self.n_nodes,
            "gammas": [self.gamma_deg, self.gamma_vol, self.gamma_cn],
            "clock": self.clock if math.isfinite(self.clock) else None,
            "deg": list(self.deg),
            "deg_t": list(self.deg_t),
            "vol": [[int(k), a, t] for k, a, t in vol],
            "nbr": [[[int(w), t] for w, t in d] for d in nbr],
        }

    @classmethod
    def from_state(cls, state):
        core = cls(state["n_nodes"], *state["gammas"])
        core.clock = -math.inf if state["clock"] is None else float(state["clock"])
        core.deg = [float(x) for x in state["deg"]]
        core.deg_t = [float(x) for x in state["deg_t"]]
        core.vol = {int(k): [float(a), float(t)] for k, a, t in state["vol"]}
        core.nbr = [{int(w): float(t) for w, t in d} for d in state["nbr"]]
        return core

    def copy(self):
        return type(self).from_state(self.to_state())


def event_features(core, src, dst, times):
    """Features of each event's dyad just before the event, advancing ``core``."""
    m = len(times)
    out = np.empty((m, 4), dtype=np.float64)
    for i in range(m):
        u, v, t = int(src[i]), int(dst[i]), float(times[i])
        out[i] = core.query(u, v, t)
        core.update(u, v, t)
    return out


def resolve_last(event_dyads, sample_slice, sample_dyad):
    """Index of the last event on each sampled dyad among events ``< slice``.

    ``sample_slice`` must be non-decreasing; slice ``m`` sees events
    ``0..m-1``. Returns -1 for dyads without such an event.
    """
    last = {}
    out = np.full(len(sample_slice), -1, dtype=np.int64)
    e = 0
    n_ev = len(event_dyads)
    for i in range(len(sample_slice)):
        m = int(sample_slice[i])
        while e < m and e < n_ev:
            last[int(event_dyads[e])] = e
            e += 1
        out[i] = last.get(int(sample_dyad[i]), -1)
    return out


def pwc_integrals(theta, cuts, X, rows, a, b, w, grad=None):
    """Weighted sum of piecewise-constant hazard integrals over [a_s, b_s].

    Piece ``j`` covers elapsed times [cuts[j-1], cuts[j]) and has level
    ``exp(theta[j] @ X[rows[s]])``. Adds d/dtheta into ``grad`` when given.
    """
    if len(rows) == 0:
        return 0.0
    J = theta.shape[0]
    lo_b = np.concatenate([[0.0], cuts])
    hi_b = np.concatenate([cuts, [np.inf]])
    a = np.asarray(a)[:, None]
    b = np.asarray(b)[:, None]
    overlap = np.clip(np.minimum(b, hi_b) - np.maximum(a, lo_b), 0.0, None)
    x = X[rows]
    level = np.exp(x @ theta.T)
    contrib = level * overlap * np.asarray(w)[:, None]
    if grad is not None:
        grad += contrib.T @ x
    return float(contrib.sum()) if J else 0.0


def _inactive_mass(total_mu, mu, act_k, A):
    acc = 0.0
    for i in range(A):
        acc += float(mu[int(act_k[i])])
    return max(total_mu - acc, 0.0)


def _exp(a):
    # inf on overflow, as in C
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


class UniformStream:
    def __init__(self, rng):
        self.rng = rng
        self.buf = rng.random(UNIFORM_BLOCK)
        self.pos = 0

    def next(self):
        if self.pos == UNIFORM_BLOCK:
            self.buf = self.rng.random(UNIFORM_BLOCK)
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return float(u)


def thinning_loop(core, rng, t0, horizon, max_events, mu, mu_cum, pair_src, pair_dst,
                  slot_of, act_k, act_tn, act_vals, n_active,
                  theta, cuts, mean, scale):
    """Ogata thinning over a piecewise-constant Markov network model.

    ``act_*`` hold per-active-dyad last-event times and per-piece hazard
    levels (capacity rows; first ``n_active`` used) and are updated in place.
    ``theta is None`` runs the pure base-rate model. Returns
    ``(dyads, times, n_proposals, n_active)``.
    """
    us = UniformStream(rng)
    n_dyads = len(mu)
    total_mu = float(mu_cum[-1]) if n_dyads else 0.0
    cuts_l = [float(c) for c in cuts]
    use_hazard = theta is not None
    J = theta.shape[0] if use_hazard else 1
    A = int(n_active)
    vals = [list(map(float, act_vals[i, :J])) for i in range(A)]
    tn = [float(act_tn[i]) for i in range(A)]
    vmax = [max(r) for r in vals]
    inactive = _inactive_mass(total_mu, mu, act_k, A)
    out_k, out_t = [], []
    s = float(t0)
    n = 0
    props = 0
    while n < max_events:
        bound = inactive
        for i in range(A):
            bound += vmax[i]
        if bound <= 0.0:
            break
        if not math.isfinite(bound):
            raise FloatingPointError(f"non-finite intensity bound {bound} at t={s}")
        s += -math.log(1.0 - us.next()) / bound
        if s > horizon:
            break
        props += 1
        cur = [vals[i][bisect_right(cuts_l, s - tn[i])] for i in range(A)]
        lam = inactive
        for i in range(A):
            lam += cur[i]
        if lam > bound * (1.0 + 1e-12):
            raise BoundViolation(f"intensity {lam} exceeds bound {bound} at t={s}")
        if us.next() * bound > lam:
            continue
        r = us.next() * lam
        k = -1
        if r < inactive or A == 0:
            for _ in range(64):
                c = bisect_right(mu_cum, us.next() * total_mu)
                c = min(c, n_dyads - 1)
                if slot_of[c] < 0 and mu[c] > 0:
                    k = c
                    break
            if k < 0:
                acc = 0.0
                target = us.next() * inactive
                for c in range(n_dyads):
                    if slot_of[c] < 0:
                        acc += mu[c]
                        k = c
                        if acc > target:
                            break
        else:
            r -= inactive
            i = 0
            acc = cur[0]
            while acc <= r and i < A - 1:
                i += 1
                acc += cur[i]
            k = int(act_k[i])
        u, v = int(pair_src[k]), int(pair_dst[k])
        if use_hazard:
            f = core.query(u, v, s)
            x = [(f[d] - mean[d]) / scale[d] for d in range(4)]
            row = []
            for j in range(J):
                th = theta[j]
                row.append(_exp(th[0] * x[0] + th[1] * x[1] + th[2] * x[2]
                                + th[3] * x[3] + th[4]))
            slot = int(slot_of[k])
            if slot < 0:
                slot = A
                A += 1
                slot_of[k] = slot
                act_k[slot] = k
                vals.append(row)
                tn.append(s)
                vmax.append(max(row))
                inactive = _inactive_mass(total_mu, mu, act_k, A)
            else:
                vals[slot] = row
                tn[slot] = s
                vmax[slot] = max(row)
        core.update(u, v, s)
        out_k.append(k)
        out_t.append(s)
        n += 1
    for i in range(A):
        act_tn[i] = tn[i]
        act_vals[i, :J] = vals[i]
    return np.asarray(out_k, dtype=np.int64), np.asarray(out_t, dtype=np.float64), props, A
