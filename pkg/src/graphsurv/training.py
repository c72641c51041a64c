"""Maximum-likelihood fitting of Markov network intensity models.

The negative log-likelihood is written as a sum over history slices
``[t_{m-1}, t_m)`` (slice 0 starts at the history start, slice M ends at the
horizon). Each slice contributes the integral of every dyad's intensity over
it and, except the last, the log-intensity of the event that closes it.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from graphsurv import _backend
from graphsurv.events import EventHistory
from graphsurv.features import DecayConfig, Standardizer, dyad_gaps, event_features, with_bias
from graphsurv.intensity import (
    MarkovModel,
    PoissonParams,
    PwcHazard,
    iter_dyad_chunks,
    poisson_logit,
    sigmoid,
    softplus,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_finite=None):
        super().__init__(message)
        self.last_finite = last_finite


@dataclass
class NllTerms:
    l_pos: float
    l_neg: float

    @property
    def total(self) -> float:
        return self.l_pos + self.l_neg


@dataclass
class ContrastiveConfig:
    k: int = 10
    sampler: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.sampler != "uniform":
            raise ValueError(f"unknown sampler {self.sampler!r}")


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.8
    weight_decay: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 10
    batch_size: int | None = None
    lr_decay: float = 1.0
    train_base: bool = True
    train_hazard: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class GradientBuffer:
    alpha: np.ndarray
    z: np.ndarray
    c: float
    theta: np.ndarray | None

    @classmethod
    def zeros_like(cls, m: MarkovModel) -> "GradientBuffer":
        return cls(
            np.zeros_like(m.base.alpha), np.zeros_like(m.base.z), 0.0,
            None if m.hazard is None else np.zeros_like(m.hazard.theta),
        )

    def max_abs(self) -> float:
        parts = [np.abs(self.alpha).max(initial=0), np.abs(self.z).max(initial=0), abs(self.c)]
        if self.theta is not None:
            parts.append(np.abs(self.theta).max(initial=0))
        return float(max(parts))


@dataclass
class TrainingData:
    """Parameter-independent quantities of a history, computed once."""

    src: np.ndarray
    dst: np.ndarray
    times: np.ndarray
    keys: np.ndarray          # dyad key u * N + v
    raw: np.ndarray           # (M, 4) features at t_m^-
    prev: np.ndarray          # previous event on the same dyad, -1 if none
    next: np.ndarray          # next event on the same dyad, -1 if none
    start: float
    horizon: float
    n_nodes: int
    sources: np.ndarray
    destinations: np.ndarray
    decay: DecayConfig
    backend: str | None = None
    _x_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.times)

    @property
    def n_dyads(self) -> int:
        both = np.intersect1d(self.sources, self.destinations).size
        return len(self.sources) * len(self.destinations) - both

    @property
    def slice_lo(self) -> np.ndarray:
        return np.concatenate([[self.start], self.times])

    @property
    def slice_hi(self) -> np.ndarray:
        return np.concatenate([self.times, [self.horizon]])

    def X(self, st: Standardizer) -> np.ndarray:
        key = (st.mean.tobytes(), st.scale.tobytes())
        if key not in self._x_cache:
            self._x_cache.clear()
            self._x_cache[key] = st.apply(self.raw)
        return self._x_cache[key]


def prepare(h: EventHistory, decay: DecayConfig, backend=None) -> TrainingData:
    if len(h) and not h.is_strict():
        raise ValueError("history must have strictly increasing times; run preprocess first")
    k = _backend.get(backend)
    raw, _ = event_features(h, decay, backend=backend)
    keys = h.src * h.n_nodes + h.dst
    idx = np.arange(len(h), dtype=np.int64)
    prev = k.resolve_last(keys, idx, keys)
    nxt = np.full(len(h), -1, dtype=np.int64)
    has_prev = prev >= 0
    nxt[prev[has_prev]] = idx[has_prev]
    return TrainingData(
        h.src, h.dst, h.times, keys, raw, prev, nxt, h.start, h.horizon, h.n_nodes,
        h.sources, h.destinations, decay, backend,
    )


def _as_data(h, m: MarkovModel) -> TrainingData:
    if isinstance(h, TrainingData):
        return h
    return prepare(h, m.decay)


# Poisson-rate terms


def _scatter_rows(out: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    n = out.shape[0]
    if vals.ndim == 1:
        out += np.bincount(idx, weights=vals, minlength=n)
    else:
        for d in range(vals.shape[1]):
            out[:, d] += np.bincount(idx, weights=vals[:, d], minlength=n)


def _poisson_weighted(p: PoissonParams, us, vs, w, g: GradientBuffer | None) -> float:
    """sum_i w_i mu(u_i, v_i), accumulating its gradient into ``g``."""
    if len(us) == 0:
        return 0.0
    diff = p.z[us] - p.z[vs]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    s = 2.0 * p.c + (p.alpha[us] + p.alpha[vs]) - dist
    val = float(np.dot(w, softplus(s)))
    if g is not None:
        ds = w * sigmoid(s)
        _scatter_rows(g.alpha, us, ds)
        _scatter_rows(g.alpha, vs, ds)
        g.c += 2.0 * float(ds.sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(dist[:, None] > 0, diff / dist[:, None], 0.0)
        gz = ds[:, None] * unit
        _scatter_rows(g.z, us, -gz)
        _scatter_rows(g.z, vs, gz)
    return val


def _poisson_neglog(p: PoissonParams, us, vs, g: GradientBuffer | None) -> float:
    """-sum_i log mu(u_i, v_i) with gradient."""
    if len(us) == 0:
        return 0.0
    diff = p.z[us] - p.z[vs]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    s = 2.0 * p.c + (p.alpha[us] + p.alpha[vs]) - dist
    mu = softplus(s)
    bad = ~(mu > 0) | ~np.isfinite(mu)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise FloatingPointError(f"non-finite base rate on edge ({us[i]}, {vs[i]})")
    val = -float(np.log(mu).sum())
    if g is not None:
        ds = -sigmoid(s) / mu
        _scatter_rows(g.alpha, us, ds)
        _scatter_rows(g.alpha, vs, ds)
        g.c += 2.0 * float(ds.sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(dist[:, None] > 0, diff / dist[:, None], 0.0)
        gz = ds[:, None] * unit
        _scatter_rows(g.z, us, -gz)
        _scatter_rows(g.z, vs, gz)
    return val


def _poisson_all_dyads(p: PoissonParams, data: TrainingData, width: float,
                       g: GradientBuffer | None) -> float:
    """width * sum over every dyad of mu_e."""
    if width <= 0:
        return 0.0
    total = 0.0
    for us, vs in iter_dyad_chunks(data.sources, data.destinations, chunk=1 << 18):
        total += _poisson_weighted(p, us, vs, np.full(len(us), width), g)
    return total


# likelihood over a block of slices


def _batch_terms(m: MarkovModel, data: TrainingData, m0: int, m1: int,
                 samples=None, g: GradientBuffer | None = None) -> NllTerms:
    """NLL restricted to slices [m0, m1).

    ``samples`` is None for the exact integral term, else a tuple
    ``(slice_idx, us, vs, last_idx, weight)`` of contrastive dyads.
    """
    k = _backend.get(data.backend)
    M = len(data)
    p = m.base
    hz = m.hazard
    lo = data.slice_lo
    hi = data.slice_hi
    A, B = float(lo[m0]), float(hi[m1 - 1])

    # positive terms: events closing slices m0 .. min(m1, M) - 1
    ev = np.arange(m0, min(m1, M))
    l_pos = 0.0
    if len(ev):
        if hz is None:
            l_pos += _poisson_neglog(p, data.src[ev], data.dst[ev], g)
        else:
            first = ev[data.prev[ev] < 0]
            rep = ev[data.prev[ev] >= 0]
            l_pos += _poisson_neglog(p, data.src[first], data.dst[first], g)
            if len(rep):
                X = data.X(m.standardizer)
                rows = data.prev[rep]
                tau = data.times[rep] - data.times[rows]
                j = hz.piece(tau)
                logs = np.einsum("ij,ij->i", hz.theta[j], X[rows])
                if not np.all(np.isfinite(logs)):
                    i = int(np.flatnonzero(~np.isfinite(logs))[0])
                    e = rep[i]
                    raise FloatingPointError(
                        f"non-finite intensity on edge ({data.src[e]}, {data.dst[e]}) at t={data.times[e]}")
                l_pos -= float(logs.sum())
                if g is not None:
                    np.subtract.at(g.theta, j, X[rows])

    l_neg = 0.0
    if samples is None:
        # base-rate exposure: all dyads for the full window, minus the part of
        # each active dyad's window after its first event
        l_neg += _poisson_all_dyads(p, data, B - A, g)
        if hz is not None and M:
            first = np.flatnonzero(data.prev < 0)
            tf = data.times[first]
            cut = np.clip(B - np.maximum(A, tf), 0.0, B - A)
            sel = cut > 0
            if np.any(sel):
                l_neg += _poisson_weighted(p, data.src[first][sel], data.dst[first][sel], -cut[sel], g)
            # hazard segments (t_n, t_next) clipped to the window
            t_next = np.where(data.next >= 0, data.times[np.maximum(data.next, 0)], data.horizon)
            a = np.maximum(A, data.times)
            b = np.minimum(B, t_next)
            sel = b > a
            if np.any(sel):
                rows = np.flatnonzero(sel)
                X = data.X(m.standardizer)
                th_g = None if g is None else g.theta
                l_neg += k.pwc_integrals(hz.theta, hz.cuts, X, rows,
                                         a[sel] - data.times[sel], b[sel] - data.times[sel],
                                         np.ones(len(rows)), th_g)
    else:
        sl, us, vs, last, w = samples
        width = hi[sl] - lo[sl]
        if hz is None:
            l_neg += _poisson_weighted(p, us, vs, w * width, g)
        else:
            inact = last < 0
            l_neg += _poisson_weighted(p, us[inact], vs[inact], (w * width)[inact], g)
            act = ~inact
            if np.any(act):
                rows = last[act]
                tn = data.times[rows]
                X = data.X(m.standardizer)
                th_g = None if g is None else g.theta
                l_neg += k.pwc_integrals(hz.theta, hz.cuts, X, rows, lo[sl][act] - tn,
                                         hi[sl][act] - tn, w[act], th_g)
    return NllTerms(l_pos, l_neg)


def sample_dyads(rng: np.random.Generator, sources, destinations, n: int):
    """Uniform draws from U x V minus self-pairs, with replacement."""
    us = rng.choice(sources, size=n)
    vs = rng.choice(destinations, size=n)
    bad = us == vs
    while np.any(bad):
        nb = int(bad.sum())
        us[bad] = rng.choice(sources, size=nb)
        vs[bad] = rng.choice(destinations, size=nb)
        bad = us == vs
    return us, vs


def _contrastive_samples(data: TrainingData, m0: int, m1: int, k: int, rng):
    kern = _backend.get(data.backend)
    n_sl = m1 - m0
    sl = np.repeat(np.arange(m0, m1, dtype=np.int64), k)
    us, vs = sample_dyads(rng, data.sources, data.destinations, n_sl * k)
    keys = us * data.n_nodes + vs
    last = kern.resolve_last(data.keys, sl, keys)
    w = np.full(len(sl), data.n_dyads / k)
    return sl, us, vs, last, w


def _check_exact(m: MarkovModel, data: TrainingData):
    M = len(data)
    if M and m.hazard is not None:
        X = data.X(m.standardizer)
        if not np.all(np.isfinite(X)):
            raise FloatingPointError("non-finite features")


def nll_exact(m: MarkovModel, h) -> NllTerms:
    """Exact NLL over the whole history window.

    Cost is O(|E| d + M J): the base-rate integral runs over all dyads, the
    hazard integral over per-dyad inter-event segments.
    """
    data = _as_data(h, m)
    _check_exact(m, data)
    return _batch_terms(m, data, 0, len(data) + 1)


def _clamp_k(c: ContrastiveConfig, data: TrainingData) -> bool:
    # k = |E| without replacement covers every dyad: that is the exact term
    if c.k > data.n_dyads:
        warnings.warn(f"contrastive k={c.k} > |E|={data.n_dyads}; using the exact integral",
                      RuntimeWarning, stacklevel=3)
    return c.k >= data.n_dyads


def nll_contrastive(m: MarkovModel, h, c: ContrastiveConfig) -> NllTerms:
    """Exact positive term plus the renormalized sampled integral term."""
    data = _as_data(h, m)
    if _clamp_k(c, data):
        return nll_exact(m, data)
    rng = np.random.default_rng(c.seed)
    M = len(data)
    samples = _contrastive_samples(data, 0, M + 1, c.k, rng)
    return _batch_terms(m, data, 0, M + 1, samples)


def grad_nll(m: MarkovModel, h, c: ContrastiveConfig | None = None) -> GradientBuffer:
    return nll_and_grad(m, h, c)[1]


def nll_and_grad(m: MarkovModel, h, c: ContrastiveConfig | None = None):
    data = _as_data(h, m)
    g = GradientBuffer.zeros_like(m)
    M = len(data)
    if c is None or _clamp_k(c, data):
        terms = _batch_terms(m, data, 0, M + 1, None, g)
    else:
        rng = np.random.default_rng(c.seed)
        terms = _batch_terms(m, data, 0, M + 1, _contrastive_samples(data, 0, M + 1, c.k, rng), g)
    return terms, g


# optimizer


class AdamW:
    """Adam with decoupled weight decay, applied only to parameters listed in ``decay``."""

    def __init__(self, params: dict, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0,
                 decay=()):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.decay = set(decay)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            if k in self.decay and self.wd:
                p *= 1.0 - self.lr * self.wd
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _param_views(m: MarkovModel, opt: OptimizerConfig):
    params = {}
    if opt.train_base:
        params["alpha"] = m.base.alpha
        params["z"] = m.base.z
        params["c"] = np.array([m.base.c])
    if m.hazard is not None and opt.train_hazard:
        params["theta"] = m.hazard.theta
    return params


def _grad_dict(g: GradientBuffer, params: dict) -> dict:
    out = {}
    for k in params:
        out[k] = np.array([g.c]) if k == "c" else getattr(g, k)
    return out


def _batches(n_slices: int, batch_size: int | None):
    if batch_size is None or batch_size >= n_slices:
        return [(0, n_slices)]
    return [(i, min(i + batch_size, n_slices)) for i in range(0, n_slices, batch_size)]


@dataclass
class FitResult:
    model: MarkovModel
    trace: list            # rows: (epoch, batch, l_pos, l_neg, total)
    epoch_loss: list


def fit(m0: MarkovModel, h_train, opt: OptimizerConfig = OptimizerConfig(),
        c: ContrastiveConfig | None = ContrastiveConfig(), callback=None) -> FitResult:
    """AdamW over shuffled contiguous history slices.

    ``c=None`` uses the exact integral term in every batch.
    """
    m = m0.copy()
    data = _as_data(h_train, m)
    n_slices = len(data) + 1
    batches = _batches(n_slices, opt.batch_size)
    exact = c is None or _clamp_k(c, data)
    seed = 0 if c is None else c.seed
    rng = np.random.default_rng(seed)
    params = _param_views(m, opt)
    adam = AdamW(params, opt.learning_rate, (opt.beta1, opt.beta2), opt.epsilon,
                 opt.weight_decay, decay=("z",))
    trace, epoch_loss = [], []
    last_finite = None
    for epoch in range(opt.epochs):
        order = rng.permutation(len(batches))
        tot = 0.0
        for b in order:
            m0_, m1_ = batches[b]
            g = GradientBuffer.zeros_like(m)
            samples = None if exact else _contrastive_samples(data, m0_, m1_, c.k, rng)
            try:
                terms = _batch_terms(m, data, m0_, m1_, samples, g)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), last_finite) from exc
            if not math.isfinite(terms.total) or not np.isfinite(g.max_abs()):
                raise TrainingDiverged(
                    f"non-finite loss/gradient at epoch {epoch}, batch {b}", last_finite)
            trace.append((epoch, int(b), terms.l_pos, terms.l_neg, terms.total))
            tot += terms.total
            adam.step(_grad_dict(g, params))
            if "c" in params:
                m.base.c = float(params["c"][0])
            for k, v in params.items():
                if not np.all(np.isfinite(v)):
                    raise TrainingDiverged(f"non-finite parameter {k} at epoch {epoch}", last_finite)
        last_finite = tot
        epoch_loss.append(tot)
        adam.lr *= opt.lr_decay
        if callback is not None:
            callback(epoch, tot, m)
        log.debug("epoch %d loss %.6g", epoch, tot)
    return FitResult(m, trace, epoch_loss)


# initialization helpers


def quantile_cuts(h, n_pieces: int = 10) -> np.ndarray:
    """Interior cut-points at the 1/J, ..., (J-1)/J quantiles of pooled dyad inter-arrival times."""
    gaps = dyad_gaps(h)
    gaps = gaps[gaps > 0]
    if n_pieces <= 1 or len(gaps) == 0:
        return np.empty(0)
    q = np.quantile(gaps, np.arange(1, n_pieces) / n_pieces)
    return np.unique(q[q > 0])


def empirical_piece_rates(data: TrainingData, cuts) -> np.ndarray:
    """Events per unit exposure in each elapsed-time piece, pooled over dyads."""
    hz = PwcHazard(cuts, np.zeros((len(cuts) + 1, 1)))
    J = hz.n_pieces
    counts = np.zeros(J)
    expo = np.zeros(J)
    rep = np.flatnonzero(data.prev >= 0)
    if len(rep):
        tau = data.times[rep] - data.times[data.prev[rep]]
        counts += np.bincount(hz.piece(tau), minlength=J)
    t_next = np.where(data.next >= 0, data.times[np.maximum(data.next, 0)], data.horizon)
    span = t_next - data.times
    lo = hz.bounds[:-1]
    hi = hz.bounds[1:]
    expo += np.clip(np.minimum(span[:, None], hi) - lo, 0.0, None).sum(axis=0)
    return (counts + 0.5) / np.maximum(expo, 1e-300)


def initial_model(h: EventHistory, kind: str = "markov-pwc", d_embed: int = 20, n_pieces: int = 10,
                  decay: DecayConfig | None = None, standardize: bool = True, seed: int = 0,
                  cuts=None, z_scale: float = 0.1) -> MarkovModel:
    """Data-driven starting point: mean base rate, empirical per-piece hazards."""
    from graphsurv.intensity import init_model

    decay = decay or DecayConfig.from_history(h)
    data = prepare(h, decay)
    span = max(h.horizon - h.start, 1e-12)
    n_first = int(np.sum(data.prev < 0))
    rate = max(n_first, 1) / (data.n_dyads * span)
    if kind == "poisson":
        cuts = None
    elif cuts is None:
        cuts = quantile_cuts(h, n_pieces)
    st = Standardizer.fit(data.raw) if (standardize and kind != "poisson") else Standardizer.identity()
    if kind == "poisson":
        rate = max(len(h), 1) / (data.n_dyads * span)
    m = init_model(h.n_nodes, d_embed, cuts, decay, st, seed, z_scale, rate,
                   h.sources, h.destinations, h.nodes.labels)
    # compensate the expected embedding distance so initial rates match
    if h.n_nodes > 1:
        rng = np.random.default_rng(seed + 1)
        us, vs = sample_dyads(rng, m.sources, m.destinations, 512)
        mean_dist = float(np.mean(np.linalg.norm(m.base.z[us] - m.base.z[vs], axis=1)))
        m.base.c += mean_dist / 2.0
    if m.hazard is not None:
        m.hazard.theta[:, -1] = np.log(empirical_piece_rates(data, m.hazard.cuts))
    return m
