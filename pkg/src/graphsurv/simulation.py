"""Sampling network histories by Ogata's modified thinning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from graphsurv import _backend
from graphsurv._pykernels import BoundViolation  # noqa: F401  re-exported
from graphsurv.events import EventHistory, NodeTable
from graphsurv.features import FeatureState
from graphsurv.intensity import (
    MarkovModel,
    all_dyads,
    base_rate_sum,
    poisson_logit,
    pwc_hazard_eval,
    softplus,
)


@dataclass
class SimConfig:
    T: float
    N: int = 10**9
    t0: float = 0.0
    seed: int = 0
    warm_start: EventHistory | None = None

    def __post_init__(self):
        if not self.t0 < self.T:
            raise ValueError("t0 must be < T")
        if self.N < 1:
            raise ValueError("N must be >= 1")


@dataclass
class ThinningBound:
    lambda_star: float
    valid_until: float


class NetworkState:
    """Feature state plus the last event (time, raw features) of every active dyad."""

    def __init__(self, features: FeatureState, last: dict | None = None):
        self.features = features
        self.last = {} if last is None else last

    @property
    def clock(self) -> float:
        return self.features.clock

    @classmethod
    def empty(cls, m: MarkovModel, backend=None) -> "NetworkState":
        return cls(FeatureState(m.n_nodes, m.decay, backend))

    @classmethod
    def from_history(cls, m: MarkovModel, h: EventHistory, backend=None) -> "NetworkState":
        st = cls.empty(m, backend)
        for ev in h:
            st.observe(ev.src, ev.dst, ev.time)
        return st

    def observe(self, u: int, v: int, t: float) -> None:
        x = self.features.query(u, v, t)
        self.last[(u, v)] = (t, x)
        self.features.update(u, v, t)


def total_intensity(m: MarkovModel, t: float, state: NetworkState, base_sum: float | None = None) -> float:
    """Sum of all dyad intensities: base-rate total corrected on active dyads."""
    if t < state.clock:
        raise ValueError("t precedes the state clock")
    if base_sum is None:
        base_sum = base_rate_sum(m.base, m.sources, m.destinations)
    if m.hazard is None or not state.last:
        return base_sum
    keys = list(state.last)
    us = np.array([k[0] for k in keys])
    vs = np.array([k[1] for k in keys])
    mu = softplus(poisson_logit(m.base, us, vs))
    tn = np.array([state.last[k][0] for k in keys])
    X = m.features(np.array([state.last[k][1] for k in keys]))
    h = pwc_hazard_eval(m.hazard, t - tn, X)
    return float(base_sum - mu.sum() + np.sum(h))


def local_upper_bound(m: MarkovModel, t: float, state: NetworkState,
                      base_sum: float | None = None) -> ThinningBound:
    """Supremum of the total intensity until the next event.

    Active dyads have frozen features, so each contributes the largest of
    its per-piece hazard levels; inactive dyads contribute their base rates.
    """
    if t < state.clock:
        raise ValueError("t precedes the state clock")
    if base_sum is None:
        base_sum = base_rate_sum(m.base, m.sources, m.destinations)
    if m.hazard is None or not state.last:
        return ThinningBound(base_sum, np.inf)
    keys = list(state.last)
    us = np.array([k[0] for k in keys])
    vs = np.array([k[1] for k in keys])
    mu = softplus(poisson_logit(m.base, us, vs))
    X = m.features(np.array([state.last[k][1] for k in keys]))
    peak = m.hazard.levels(X).max(axis=1)
    return ThinningBound(float(base_sum - mu.sum() + peak.sum()), np.inf)


def naive_total_intensity(m: MarkovModel, t: float, state: NetworkState) -> float:
    """Per-dyad summation over U x V, for testing."""
    from graphsurv.intensity import markov_intensity

    us, vs = all_dyads(m.sources, m.destinations)
    return float(sum(markov_intensity(m, int(u), int(v), t, state.last) for u, v in zip(us, vs)))


@dataclass
class SimResult:
    history: EventHistory
    n_proposals: int
    n_events: int

    @property
    def acceptance_rate(self) -> float:
        return self.n_events / self.n_proposals if self.n_proposals else 0.0


def simulate(m: MarkovModel, cfg: SimConfig, backend=None) -> EventHistory:
    return simulate_run(m, cfg, backend).history


def simulate_run(m: MarkovModel, cfg: SimConfig, backend=None) -> SimResult:
    """Run the thinning loop; see :func:`simulate`.

    The bound is recomputed after each accepted event; a proposal whose
    intensity exceeds it aborts with ``BoundViolation``.
    """
    kern = _backend.get(backend)
    pair_src, pair_dst = all_dyads(m.sources, m.destinations)
    n_dyads = len(pair_src)
    if n_dyads == 0:
        raise ValueError("model has no dyads")
    mu = np.ascontiguousarray(softplus(poisson_logit(m.base, pair_src, pair_dst)))
    if not np.all(np.isfinite(mu)):
        raise FloatingPointError("non-finite base rates in model")
    mu_cum = np.cumsum(mu)
    slot_of = np.full(n_dyads, -1, dtype=np.int64)
    pair_keys = pair_src * m.n_nodes + pair_dst

    core = kern.FeatureCore(m.n_nodes, *m.decay.as_tuple())
    t0 = cfg.t0
    warm_k, warm_t, warm_x = [], [], []
    if cfg.warm_start is not None and len(cfg.warm_start):
        w = cfg.warm_start
        raw = kern.event_features(core, w.src, w.dst, w.times)
        keys = w.src * m.n_nodes + w.dst
        idx = np.searchsorted(pair_keys, keys)
        if np.any(idx >= n_dyads) or np.any(pair_keys[np.minimum(idx, n_dyads - 1)] != keys):
            raise ValueError("warm-start history has dyads outside the model's dyad set")
        lastpos = {}
        for i, k in enumerate(idx.tolist()):
            lastpos[k] = i
        for k, i in lastpos.items():
            warm_k.append(k)
            warm_t.append(float(w.times[i]))
            warm_x.append(raw[i])
        t0 = max(t0, float(w.times[-1]))

    use_hazard = m.hazard is not None
    J = m.hazard.n_pieces if use_hazard else 1
    n_warm = len(warm_k) if use_hazard else 0
    cap = int(min(n_dyads, n_warm + min(cfg.N, n_dyads)))
    act_k = np.zeros(max(cap, 1), dtype=np.int64)
    act_tn = np.zeros(max(cap, 1))
    act_vals = np.zeros((max(cap, 1), J))
    if n_warm:
        order = np.argsort(warm_k, kind="stable")
        ks = np.asarray(warm_k)[order]
        act_k[:n_warm] = ks
        act_tn[:n_warm] = np.asarray(warm_t)[order]
        act_vals[:n_warm] = m.hazard.levels(m.features(np.asarray(warm_x)[order]))
        slot_of[ks] = np.arange(n_warm)

    theta = m.hazard.theta if use_hazard else None
    cuts = m.hazard.cuts if use_hazard else np.empty(0)
    rng = np.random.default_rng(cfg.seed)
    if t0 >= cfg.T:
        ks_out, ts_out, props, A = np.empty(0, np.int64), np.empty(0), 0, n_warm
    else:
        ks_out, ts_out, props, A = kern.thinning_loop(
            core, rng, float(t0), float(cfg.T), int(cfg.N), mu, mu_cum, pair_src, pair_dst,
            slot_of, act_k, act_tn, act_vals, n_warm, theta, cuts,
            m.standardizer.mean, m.standardizer.scale,
        )
    src = pair_src[ks_out]
    dst = pair_dst[ks_out]
    hist = EventHistory(src, dst, ts_out, NodeTable(m.labels), horizon=float(cfg.T),
                        start=float(t0), sources=m.sources, destinations=m.destinations)
    return SimResult(hist, int(props), len(ts_out))
