# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; line-for-line counterpart of ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY, isfinite
from libcpp.map cimport map as ordered_map
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector
from libcpp.pair cimport pair

from graphsurv._pykernels import BoundViolation, UNIFORM_BLOCK

cnp.import_array()

BACKEND = "cython"

ctypedef long long i64


cdef class FeatureCore:
    cdef public int n_nodes
    cdef public double gamma_deg, gamma_vol, gamma_cn, clock
    cdef vector[double] deg, deg_t
    cdef unordered_map[i64, pair[double, double]] vol
    # ordered so the cn sum runs over neighbours in id order, as in the fallback
    cdef vector[ordered_map[i64, double]] nbr

    def __init__(self, n_nodes, gamma_deg, gamma_vol, gamma_cn):
        self.n_nodes = int(n_nodes)
        self.gamma_deg = float(gamma_deg)
        self.gamma_vol = float(gamma_vol)
        self.gamma_cn = float(gamma_cn)
        self.clock = -INFINITY
        self.deg.assign(self.n_nodes, 0.0)
        self.deg_t.assign(self.n_nodes, 0.0)
        self.nbr.resize(self.n_nodes)

    cdef int _update(self, i64 u, i64 v, double t) except -1:
        cdef i64 key
        cdef double g = self.gamma_deg
        if t < self.clock:
            raise ValueError(f"out-of-order update at t={t} < clock={self.clock}")
        if u < 0 or v < 0 or u >= self.n_nodes or v >= self.n_nodes:
            raise IndexError("node id out of range")
        self.deg[u] = self.deg[u] * exp(-g * (t - self.deg_t[u])) + 1.0
        self.deg_t[u] = t
        self.deg[v] = self.deg[v] * exp(-g * (t - self.deg_t[v])) + 1.0
        self.deg_t[v] = t
        key = u * self.n_nodes + v
        it = self.vol.find(key)
        if it == self.vol.end():
            self.vol[key] = pair[double, double](1.0, t)
        else:
            self.vol[key] = pair[double, double](
                self.vol[key].first * exp(-self.gamma_vol * (t - self.vol[key].second)) + 1.0, t)
        self.nbr[u][v] = t
        self.nbr[v][u] = t
        self.clock = t
        return 0

    cdef double _degree(self, i64 u, double t):
        if u < 0 or u >= self.n_nodes or self.deg[u] == 0.0:
            return 0.0
        return self.deg[u] * exp(-self.gamma_deg * (t - self.deg_t[u]))

    cdef void _query(self, i64 u, i64 v, double t, double* out):
        cdef i64 n = self.n_nodes
        cdef i64 key, w
        cdef double tw, tv, cn = 0.0
        cdef ordered_map[i64, double]* nu
        cdef ordered_map[i64, double]* nv
        out[0] = self._degree(u, t)
        out[1] = self._degree(v, t)
        out[2] = 0.0
        out[3] = 0.0
        if u < 0 or v < 0 or u >= n or v >= n:
            return
        key = u * n + v
        it = self.vol.find(key)
        if it != self.vol.end():
            out[2] = self.vol[key].first * exp(-self.gamma_vol * (t - self.vol[key].second))
        nu = &self.nbr[u]
        nv = &self.nbr[v]
        if nu.size() > nv.size():
            nu, nv = nv, nu
        for kv in nu[0]:
            w = kv.first
            if w == u or w == v:
                continue
            jt = nv.find(w)
            if jt != nv.end():
                tw = kv.second
                tv = nv[0][w]
                cn += exp(-self.gamma_cn * (t - (tw if tw > tv else tv)))
        out[3] = cn

    def update(self, u, v, t):
        self._update(u, v, t)

    def degree(self, u, t):
        return self._degree(u, t)

    def query(self, u, v, t):
        cdef double out[4]
        self._query(u, v, t, out)
        return (out[0], out[1], out[2], out[3])

    def to_state(self):
        vol = sorted((kv.first, kv.second.first, kv.second.second) for kv in self.vol)
        nbr = [sorted((kv.first, kv.second) for kv in self.nbr[i]) for i in range(self.n_nodes)]
        return {
            "n_nodes": self.n_nodes,
            "gammas": [self.gamma_deg, self.gamma_vol, self.gamma_cn],
            "clock": self.clock if isfinite(self.clock) else None,
            "deg": [self.deg[i] for i in range(self.n_nodes)],
            "deg_t": [self.deg_t[i] for i in range(self.n_nodes)],
            "vol": [[int(k), a, t] for k, a, t in vol],
            "nbr": [[[int(w), t] for w, t in d] for d in nbr],
        }

    @classmethod
    def from_state(cls, state):
        cdef FeatureCore core = cls(state["n_nodes"], *state["gammas"])
        core.clock = -INFINITY if state["clock"] is None else float(state["clock"])
        for i, x in enumerate(state["deg"]):
            core.deg[i] = float(x)
        for i, x in enumerate(state["deg_t"]):
            core.deg_t[i] = float(x)
        for k, a, t in state["vol"]:
            core.vol[int(k)] = pair[double, double](float(a), float(t))
        for i, d in enumerate(state["nbr"]):
            for w, t in d:
                core.nbr[i][int(w)] = float(t)
        return core

    def copy(self):
        return type(self).from_state(self.to_state())


def event_features(FeatureCore core, src, dst, times):
    cdef i64[:] s = np.ascontiguousarray(src, dtype=np.int64)
    cdef i64[:] d = np.ascontiguousarray(dst, dtype=np.int64)
    cdef double[:] t = np.ascontiguousarray(times, dtype=np.float64)
    cdef Py_ssize_t m = t.shape[0], i
    out = np.empty((m, 4), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(m):
        core._query(s[i], d[i], t[i], &o[i, 0])
        core._update(s[i], d[i], t[i])
    return out


def resolve_last(event_dyads, sample_slice, sample_dyad):
    cdef i64[:] ev = np.ascontiguousarray(event_dyads, dtype=np.int64)
    cdef i64[:] sl = np.ascontiguousarray(sample_slice, dtype=np.int64)
    cdef i64[:] dy = np.ascontiguousarray(sample_dyad, dtype=np.int64)
    cdef Py_ssize_t n_s = sl.shape[0], n_ev = ev.shape[0], i, e = 0
    cdef i64 m
    cdef unordered_map[i64, i64] last
    out = np.full(n_s, -1, dtype=np.int64)
    cdef i64[:] o = out
    for i in range(n_s):
        m = sl[i]
        while e < m and e < n_ev:
            last[ev[e]] = e
            e += 1
        it = last.find(dy[i])
        if it != last.end():
            o[i] = last[dy[i]]
    return out


def pwc_integrals(theta, cuts, X, rows, a, b, w, grad=None):
    cdef double[:, ::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double[:] cu = np.ascontiguousarray(cuts, dtype=np.float64)
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef i64[:] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef double[:] aa = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:] bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t S = r.shape[0], J = th.shape[0], D = th.shape[1], s, j, d
    cdef double lo, hi, val, dot, total = 0.0
    cdef bint want_grad = grad is not None
    g_arr = np.zeros((J, D), dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    for s in range(S):
        for j in range(J):
            lo = 0.0 if j == 0 else cu[j - 1]
            hi = INFINITY if j == J - 1 else cu[j]
            if aa[s] > lo:
                lo = aa[s]
            if bb[s] < hi:
                hi = bb[s]
            if hi <= lo:
                continue
            dot = 0.0
            for d in range(D):
                dot += th[j, d] * x[r[s], d]
            val = exp(dot) * (hi - lo) * ww[s]
            total += val
            if want_grad:
                for d in range(D):
                    g[j, d] += val * x[r[s], d]
    if want_grad:
        grad += g_arr
    return total


cdef class _Uniforms:
    cdef object rng
    cdef double[:] buf
    cdef Py_ssize_t pos

    def __init__(self, rng):
        self.rng = rng
        self.buf = rng.random(UNIFORM_BLOCK)
        self.pos = 0

    cdef inline double next(self):
        cdef double u
        if self.pos == UNIFORM_BLOCK:
            self.buf = self.rng.random(UNIFORM_BLOCK)
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


cdef inline Py_ssize_t _bisect_right(double[:] a, double x) noexcept:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if x < a[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef double _inactive_mass(double total_mu, double[:] mu, i64[:] act_k, Py_ssize_t A):
    cdef double acc = 0.0
    cdef Py_ssize_t i
    for i in range(A):
        acc += mu[act_k[i]]
    return total_mu - acc if total_mu - acc > 0.0 else 0.0


def thinning_loop(FeatureCore core, rng, double t0, double horizon, i64 max_events,
                  mu_arr, mu_cum_arr, pair_src_arr, pair_dst_arr,
                  slot_of_arr, act_k_arr, act_tn_arr, act_vals_arr, i64 n_active,
                  theta, cuts_arr, mean_arr, scale_arr):
    cdef _Uniforms us = _Uniforms(rng)
    cdef double[:] mu = mu_arr
    cdef double[:] mu_cum = mu_cum_arr
    cdef i64[:] pair_src = pair_src_arr
    cdef i64[:] pair_dst = pair_dst_arr
    cdef i64[:] slot_of = slot_of_arr
    cdef i64[:] act_k = act_k_arr
    cdef double[:] act_tn = act_tn_arr
    cdef double[:, ::1] vals = act_vals_arr
    cdef double[:] cuts = np.ascontiguousarray(cuts_arr, dtype=np.float64)
    cdef double[:] mean = np.ascontiguousarray(mean_arr, dtype=np.float64)
    cdef double[:] scale = np.ascontiguousarray(scale_arr, dtype=np.float64)
    cdef bint use_hazard = theta is not None
    cdef double[:, ::1] th
    cdef Py_ssize_t J = 1, n_dyads = mu.shape[0], A = n_active, i, j, c, k, slot, tries
    if use_hazard:
        th = np.ascontiguousarray(theta, dtype=np.float64)
        J = th.shape[0]
    cdef double total_mu = mu_cum[n_dyads - 1] if n_dyads else 0.0
    cdef vector[double] vmax, cur
    cdef double f[4]
    cdef double x[4]
    cdef double s = t0, bound, lam, r, acc, target, m, dot
    cdef i64 n = 0, props = 0, u, v
    cdef bint fresh
    out_k = []
    out_t = []
    vmax.resize(vals.shape[0])
    cur.resize(vals.shape[0])
    for i in range(A):
        m = vals[i, 0]
        for j in range(1, J):
            if vals[i, j] > m:
                m = vals[i, j]
        vmax[i] = m
    cdef double inactive = _inactive_mass(total_mu, mu, act_k, A)
    while n < max_events:
        bound = inactive
        for i in range(A):
            bound += vmax[i]
        if bound <= 0.0:
            break
        if not isfinite(bound):
            raise FloatingPointError(f"non-finite intensity bound {bound} at t={s}")
        s += -log(1.0 - us.next()) / bound
        if s > horizon:
            break
        props += 1
        lam = inactive
        for i in range(A):
            cur[i] = vals[i, _bisect_right(cuts, s - act_tn[i])]
        for i in range(A):
            lam += cur[i]
        if lam > bound * (1.0 + 1e-12):
            raise BoundViolation(f"intensity {lam} exceeds bound {bound} at t={s}")
        if us.next() * bound > lam:
            continue
        r = us.next() * lam
        k = -1
        if r < inactive or A == 0:
            for tries in range(64):
                c = _bisect_right(mu_cum, us.next() * total_mu)
                if c > n_dyads - 1:
                    c = n_dyads - 1
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
            k = act_k[i]
        u = pair_src[k]
        v = pair_dst[k]
        if use_hazard:
            core._query(u, v, s, f)
            for i in range(4):
                x[i] = (f[i] - mean[i]) / scale[i]
            slot = slot_of[k]
            fresh = slot < 0
            if fresh:
                slot = A
                A += 1
                slot_of[k] = slot
                act_k[slot] = k
            m = -INFINITY
            for j in range(J):
                dot = th[j, 0] * x[0] + th[j, 1] * x[1] + th[j, 2] * x[2] + th[j, 3] * x[3] + th[j, 4]
                vals[slot, j] = exp(dot)
                if vals[slot, j] > m:
                    m = vals[slot, j]
            vmax[slot] = m
            act_tn[slot] = s
            if fresh:
                inactive = _inactive_mass(total_mu, mu, act_k, A)
        core._update(u, v, s)
        out_k.append(k)
        out_t.append(s)
        n += 1
    return np.asarray(out_k, dtype=np.int64), np.asarray(out_t, dtype=np.float64), props, A
