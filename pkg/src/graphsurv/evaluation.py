"""Burstiness statistics and future-link-prediction scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from graphsurv import _backend
from graphsurv.events import EventHistory
from graphsurv.intensity import MarkovModel, poisson_logit, softplus

SCORERS = ("markov_pwc", "preferential_attachment", "poisson", "random")


class LookAheadError(RuntimeError):
    """A scorer was asked about a time its state has already moved past."""


# burstiness

def burstiness(times) -> tuple[float, float]:
    """Coefficient of variation of the inter-event times and B = (cv - 1) / (cv + 1).

    The variance is taken over the n - 1 gaps of n timestamps.
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or len(t) < 3:
        raise ValueError("burstiness needs at least 3 event times")
    tau = np.diff(t)
    if np.any(tau < 0):
        raise ValueError("times must be sorted")
    mean = tau.mean()
    if not mean > 0:
        raise ValueError("mean inter-event time is zero")
    # normalized first so tiny gaps do not underflow
    cv = math.sqrt(float(np.mean((tau / mean - 1.0) ** 2)))
    return cv, (cv - 1.0) / (cv + 1.0)


@dataclass
class EdgeBurstiness:
    src: int
    dst: int
    n_events: int
    cv: float
    B: float


@dataclass
class BurstinessReport:
    edges: list[EdgeBurstiness]
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return np.array([e.B for e in self.edges])

    def fraction_in(self, lo: float, hi: float) -> float:
        """Share of reported dyads with lo < B < hi."""
        b = self.values
        if len(b) == 0:
            return 0.0
        return float(np.mean((b > lo) & (b < hi)))


def burstiness_report(h: EventHistory, min_events: int = 3, bins=20) -> BurstinessReport:
    """Per-dyad burstiness for dyads with at least ``min_events`` events, plus a histogram over [-1, 1]."""
    min_events = max(3, int(min_events))
    key = h.src * h.n_nodes + h.dst
    order = np.lexsort((h.times, key))
    k, t = key[order], h.times[order]
    edges = []
    if len(k):
        starts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
        ends = np.r_[starts[1:], len(k)]
        for a, b in zip(starts.tolist(), ends.tolist()):
            if b - a < min_events:
                continue
            ts = t[a:b]
            if ts[-1] == ts[0]:
                continue
            cv, B = burstiness(ts)
            u, v = divmod(int(k[a]), h.n_nodes)
            edges.append(EdgeBurstiness(u, v, b - a, cv, B))
    counts, bin_edges = np.histogram([e.B for e in edges], bins=bins, range=(-1.0, 1.0))
    return BurstinessReport(edges, bin_edges, counts)


# labeled pairs

@dataclass(frozen=True)
class LabeledPair:
    src: int
    dst: int
    time: float
    label: int
    event: int      # index of the originating event in the evaluation history


@dataclass
class LabeledPairs:
    src: np.ndarray
    dst: np.ndarray
    times: np.ndarray
    labels: np.ndarray
    event: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        for row in zip(self.src.tolist(), self.dst.tolist(), self.times.tolist(),
                       self.labels.tolist(), self.event.tolist()):
            yield LabeledPair(*row)


def make_labeled_pairs(h_eval: EventHistory, n_neg: int = 1, seed: int = 0) -> LabeledPairs:
    """Each observed event (label 1) followed by ``n_neg`` copies with the
    destination replaced by a uniform draw from the destination set minus {u, v}.
    """
    if n_neg < 0:
        raise ValueError("n_neg must be >= 0")
    dests = np.asarray(h_eval.destinations, dtype=np.int64)
    if len(dests) < 3:
        raise ValueError("negative sampling needs at least 3 candidate nodes")
    m = len(h_eval)
    rng = np.random.default_rng(seed)
    us = np.repeat(h_eval.src, n_neg)
    vs = np.repeat(h_eval.dst, n_neg)
    neg = dests[rng.integers(len(dests), size=m * n_neg)]
    bad = (neg == us) | (neg == vs)
    while bad.any():
        neg[bad] = dests[rng.integers(len(dests), size=int(bad.sum()))]
        bad = (neg == us) | (neg == vs)
    per = n_neg + 1
    src = np.repeat(h_eval.src, per)
    dst = np.empty(m * per, dtype=np.int64)
    dst[0::per] = h_eval.dst
    labels = np.zeros(m * per, dtype=np.int64)
    labels[0::per] = 1
    for j in range(n_neg):
        dst[j + 1::per] = neg[j::n_neg]
    return LabeledPairs(src, dst, np.repeat(h_eval.times, per), labels,
                        np.repeat(np.arange(m), per))


# scorers

@dataclass
class Scorer:
    """A named scoring rule. ``model`` is required for poisson and markov_pwc."""

    name: str
    model: MarkovModel | None = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in SCORERS:
            raise ValueError(f"unknown scorer {self.name!r}; expected one of {SCORERS}")
        if self.name in ("poisson", "markov_pwc") and self.model is None:
            raise ValueError(f"scorer {self.name!r} needs a model")
        if self.name == "markov_pwc" and self.model.hazard is None:
            raise ValueError("markov_pwc scorer needs a model with a transition hazard")

    def state(self, n_nodes: int, backend=None) -> "ScorerState":
        return ScorerState(self, n_nodes, backend)


class ScorerState:
    """Streaming state of a scorer; events must be observed in time order and
    every score request must be strictly later than the last observed event.
    """

    def __init__(self, scorer: Scorer, n_nodes: int, backend=None):
        self.scorer = scorer
        self.clock = -math.inf
        self.n_nodes = n_nodes
        self.degree = np.zeros(n_nodes)
        self.last: dict[tuple, tuple] = {}
        self.rng = np.random.default_rng(scorer.seed)
        self.core = None
        if scorer.name == "markov_pwc":
            self.core = _backend.get(backend).FeatureCore(n_nodes, *scorer.model.decay.as_tuple())

    def observe(self, u: int, v: int, t: float) -> None:
        if t < self.clock:
            raise ValueError("events must be observed in time order")
        if self.core is not None:
            self.last[(u, v)] = (t, self.core.query(u, v, t))
            self.core.update(u, v, t)
        self.degree[u] += 1
        self.degree[v] += 1
        self.clock = t

    def score(self, us, vs, t: float) -> np.ndarray:
        if not t > self.clock:
            raise LookAheadError(f"scoring at t={t} but state already holds events up to {self.clock}")
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        name = self.scorer.name
        if name == "random":
            return self.rng.random(len(us))
        if name == "preferential_attachment":
            return self.degree[us] * self.degree[vs]
        m = self.scorer.model
        mu = softplus(poisson_logit(m.base, us, vs))
        if name == "poisson":
            return mu
        out = mu.copy()
        hit = [i for i, k in enumerate(zip(us.tolist(), vs.tolist())) if k in self.last]
        if hit:
            recs = [self.last[(int(us[i]), int(vs[i]))] for i in hit]
            tn = np.array([r[0] for r in recs])
            X = m.features(np.array([r[1] for r in recs]))
            j = m.hazard.piece(t - tn)
            out[hit] = np.exp(np.sum(m.hazard.theta[j] * X, axis=1))
        return out


def score(scorer: Scorer, pairs: LabeledPairs, history: EventHistory, backend=None) -> np.ndarray:
    """Score every pair using only the events of ``history`` strictly before the pair's time."""
    st = scorer.state(history.n_nodes, backend)
    order = np.argsort(pairs.times, kind="stable")
    out = np.empty(len(pairs))
    ts = pairs.times[order]
    src, dst, times = history.src.tolist(), history.dst.tolist(), history.times.tolist()
    i = 0
    starts = np.flatnonzero(np.r_[True, ts[1:] != ts[:-1]]) if len(ts) else np.empty(0, int)
    ends = np.r_[starts[1:], len(ts)]
    for a, b in zip(starts.tolist(), ends.tolist()):
        t = float(ts[a])
        while i < len(times) and times[i] < t:
            st.observe(src[i], dst[i], times[i])
            i += 1
        idx = order[a:b]
        out[idx] = st.score(pairs.src[idx], pairs.dst[idx], t)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"scorer {scorer.name!r} produced non-finite scores")
    return out


# ROC / AUC

@dataclass
class RocResult:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocResult:
    """ROC curve and the rank-based AUC with midranks for ties."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    if np.any(np.isnan(s)):
        raise ValueError("scores contain NaN")
    ranks = rankdata(s)
    u_stat = float(ranks[y].sum()) - n_pos * (n_pos + 1) / 2.0
    auc = u_stat / (n_pos * n_neg)

    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.flatnonzero(s_sorted[1:] != s_sorted[:-1]), len(s) - 1]
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    thresholds = np.r_[np.inf, s_sorted[last]]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return RocResult(thresholds, tpr, fpr, auc)


def pairwise_auc(scores, labels) -> float:
    """O(n_pos * n_neg) reference: P(s+ > s-) + P(s+ = s-) / 2."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    diff = pos[:, None] - neg[None, :]
    count = float(np.sum(diff > 0)) + 0.5 * float(np.sum(diff == 0))
    return count / (len(pos) * len(neg))


# benchmark

@dataclass
class LinkPredictionResult:
    auc: dict[str, list[float]] = field(default_factory=dict)
    roc: dict[str, RocResult] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            name: {"mean": float(np.mean(v)), "std": float(np.std(v)), "per_seed": list(v)}
            for name, v in self.auc.items()
        }


def link_prediction(history: EventHistory, h_eval: EventHistory, scorers: list[Scorer],
                    seeds=(0,), n_neg: int = 1, backend=None) -> LinkPredictionResult:
    """AUC of each scorer on ``h_eval`` for each negative-sampling seed.

    ``history`` must contain every event preceding and including ``h_eval``;
    the state is streamed through it so test events see all earlier events.
    The ROC curve kept per scorer is the one of the first seed.
    """
    res = LinkPredictionResult()
    for seed in seeds:
        pairs = make_labeled_pairs(h_eval, n_neg, seed)
        for sc in scorers:
            if sc.name == "random":
                sc = Scorer("random", seed=sc.seed + int(seed))
            r = roc_auc(score(sc, pairs, history, backend), pairs.labels)
            res.auc.setdefault(sc.name, []).append(r.auc)
            res.roc.setdefault(sc.name, r)
    return res
