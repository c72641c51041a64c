"""Edge intensities: latent-space Poisson base rate and piecewise-constant transition hazard."""
from __future__ import annotations

import hashlib
import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from graphsurv import _backend
from graphsurv.features import N_FEATURES, DecayConfig, Standardizer, with_bias

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def softplus(x):
    """log(1 + exp(x)) without overflow or underflow to zero for moderate x."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class PoissonParams:
    alpha: np.ndarray      # (N,)
    z: np.ndarray          # (N, d)
    c: float = 0.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.z = np.asarray(self.z, dtype=float).reshape(len(self.alpha), -1)
        self.c = float(self.c)

    @property
    def d_embed(self) -> int:
        return self.z.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.alpha)

    def copy(self) -> "PoissonParams":
        return PoissonParams(self.alpha.copy(), self.z.copy(), self.c)


def poisson_logit(p: PoissonParams, u, v):
    """2c + alpha_u + alpha_v - ||z_u - z_v|| (vectorized over u, v)."""
    u = np.asarray(u)
    v = np.asarray(v)
    dist = np.sqrt(np.sum((p.z[u] - p.z[v]) ** 2, axis=-1))
    return 2.0 * p.c + (p.alpha[u] + p.alpha[v]) - dist


def poisson_rate(p: PoissonParams, u, v):
    n = p.n_nodes
    if np.any((np.asarray(u) < 0) | (np.asarray(u) >= n) | (np.asarray(v) < 0) | (np.asarray(v) >= n)):
        raise KeyError("unknown node id")
    r = softplus(poisson_logit(p, u, v))
    return float(r) if r.ndim == 0 else r


@dataclass
class PwcHazard:
    """Hazard exp(theta_j . x) on elapsed-time pieces [b_{j-1}, b_j), b_0 = 0, b_J = inf.

    ``cuts`` holds the interior boundaries b_1 < ... < b_{J-1}.
    """

    cuts: np.ndarray
    theta: np.ndarray      # (J, D)

    def __post_init__(self):
        self.cuts = np.asarray(self.cuts, dtype=float).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=float).reshape(len(self.cuts) + 1, -1)
        if np.any(self.cuts <= 0) or np.any(np.diff(self.cuts) <= 0):
            raise ValueError("cuts must be positive and strictly increasing")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")

    @property
    def n_pieces(self) -> int:
        return self.theta.shape[0]

    @property
    def bounds(self) -> np.ndarray:
        return np.concatenate([[0.0], self.cuts, [np.inf]])

    def piece(self, tau):
        return np.searchsorted(self.cuts, tau, side="right")

    def levels(self, x) -> np.ndarray:
        """Per-piece hazard values exp(theta_j . x); x is (D,) or (n, D)."""
        return np.exp(np.asarray(x) @ self.theta.T)

    def copy(self) -> "PwcHazard":
        return PwcHazard(self.cuts.copy(), self.theta.copy())


def pwc_hazard_eval(h: PwcHazard, tau, x):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("elapsed time must be >= 0")
    j = h.piece(tau)
    x = np.asarray(x, dtype=float)
    val = np.exp(np.sum(h.theta[j] * x, axis=-1))
    return float(val) if np.ndim(val) == 0 else val


def cumulative_hazard(h: PwcHazard, tau_a, tau_b, x) -> float:
    """Integral of the hazard over elapsed times [tau_a, tau_b] with frozen x."""
    lo = np.concatenate([[0.0], h.cuts])
    hi = np.concatenate([h.cuts, [np.inf]])
    ov = np.clip(np.minimum(tau_b, hi) - np.maximum(tau_a, lo), 0.0, None)
    return float(np.dot(h.levels(x), ov))


def survival(h: PwcHazard, tau, x) -> float:
    return float(np.exp(-cumulative_hazard(h, 0.0, tau, x)))


@dataclass
class MarkovModel:
    """Base rate plus an optional transition hazard (``None`` = pure Poisson)."""

    base: PoissonParams
    hazard: PwcHazard | None = None
    decay: DecayConfig = field(default_factory=DecayConfig)
    standardizer: Standardizer = field(default_factory=Standardizer.identity)
    sources: np.ndarray | None = None
    destinations: np.ndarray | None = None
    labels: list | None = None

    def __post_init__(self):
        n = self.base.n_nodes
        if self.sources is None:
            self.sources = np.arange(n)
        if self.destinations is None:
            self.destinations = np.arange(n)
        self.sources = np.unique(np.asarray(self.sources, dtype=np.int64))
        self.destinations = np.unique(np.asarray(self.destinations, dtype=np.int64))
        if self.labels is None:
            self.labels = [str(i) for i in range(n)]

    @property
    def kind(self) -> str:
        return "poisson" if self.hazard is None else "markov-pwc"

    @property
    def n_nodes(self) -> int:
        return self.base.n_nodes

    @property
    def n_dyads(self) -> int:
        both = np.intersect1d(self.sources, self.destinations).size
        return len(self.sources) * len(self.destinations) - both

    def features(self, raw) -> np.ndarray:
        return self.standardizer.apply(raw)

    def copy(self) -> "MarkovModel":
        return replace(
            self,
            base=self.base.copy(),
            hazard=None if self.hazard is None else self.hazard.copy(),
            standardizer=Standardizer(self.standardizer.mean.copy(), self.standardizer.scale.copy()),
            sources=self.sources.copy(),
            destinations=self.destinations.copy(),
            labels=list(self.labels),
        )

    # checkpoint I/O

    def to_dict(self) -> dict:
        d = {
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "labels": list(self.labels),
            "sources": self.sources.tolist(),
            "destinations": self.destinations.tolist(),
            "alpha": self.base.alpha.tolist(),
            "z": self.base.z.tolist(),
            "c": self.base.c,
            "decay": list(self.decay.as_tuple()),
            "standardizer": self.standardizer.to_dict(),
        }
        if self.hazard is not None:
            d["cuts"] = self.hazard.cuts.tolist()
            d["theta"] = self.hazard.theta.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovModel":
        try:
            if d.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
            n = len(d["alpha"])
            z = np.asarray(d["z"], dtype=float).reshape(n, -1)
            base = PoissonParams(np.asarray(d["alpha"], dtype=float), z, d["c"])
            hazard = None
            if d["kind"] == "markov-pwc":
                hazard = PwcHazard(d["cuts"], d["theta"])
            elif d["kind"] != "poisson":
                raise CheckpointError(f"unknown model kind {d['kind']!r}")
            return cls(
                base, hazard, DecayConfig(*d["decay"]), Standardizer.from_dict(d["standardizer"]),
                np.asarray(d["sources"]), np.asarray(d["destinations"]), list(d["labels"]),
            )
        except CheckpointError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"invalid checkpoint: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "MarkovModel":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_dict(d)


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class EdgeEventIndex:
    """Per-dyad event times with the features frozen at each event.

    Answers "last event of dyad e before t" for any t, which is the lookup the
    Markov intensity needs.
    """

    def __init__(self, h, decay: DecayConfig, backend=None):
        from graphsurv.features import event_features

        raw, _ = event_features(h, decay, backend=backend)
        self.raw = with_bias(raw)
        self.n_nodes = h.n_nodes
        self._times: dict[tuple, list] = {}
        self._rows: dict[tuple, list] = {}
        for m, (u, v, t) in enumerate(zip(h.src.tolist(), h.dst.tolist(), h.times.tolist())):
            self._times.setdefault((u, v), []).append(t)
            self._rows.setdefault((u, v), []).append(m)

    def last_before(self, u, v, t):
        """(t_n, raw x_n) of the last event with t_n < t, or None."""
        ts = self._times.get((u, v))
        if not ts:
            return None
        i = bisect_left(ts, t) - 1
        if i < 0:
            return None
        return ts[i], self.raw[self._rows[(u, v)][i]]

    def last_at_or_before(self, u, v, t):
        ts = self._times.get((u, v))
        if not ts:
            return None
        i = bisect_right(ts, t) - 1
        if i < 0:
            return None
        return ts[i], self.raw[self._rows[(u, v)][i]]

    def has_event_inside(self, u, v, a, b) -> bool:
        ts = self._times.get((u, v))
        if not ts:
            return False
        return bisect_right(ts, a) < bisect_left(ts, b)

    def event_times(self, u, v) -> list:
        return list(self._times.get((u, v), []))


def markov_intensity(m: MarkovModel, u: int, v: int, t: float, last) -> float:
    """Intensity of dyad (u, v) at t given ``last``: a dict (u, v) -> (t_n, raw x_n)
    or an :class:`EdgeEventIndex`.
    """
    rec = _lookup(last, u, v, t)
    if rec is None or m.hazard is None:
        return poisson_rate(m.base, u, v)
    t_n, x_raw = rec
    if t < t_n:
        raise ValueError(f"t={t} precedes the dyad's last event {t_n}")
    x = m.features(x_raw)[0]
    return pwc_hazard_eval(m.hazard, t - t_n, x)


def intensity_increment(m: MarkovModel, u: int, v: int, t: float, last) -> float:
    """Excess of the transition hazard over the base rate (0 before the first event)."""
    rec = _lookup(last, u, v, t)
    if rec is None or m.hazard is None:
        return 0.0
    t_n, x_raw = rec
    x = m.features(x_raw)[0]
    return pwc_hazard_eval(m.hazard, t - t_n, x) - poisson_rate(m.base, u, v)


def _lookup(last, u, v, t):
    if isinstance(last, EdgeEventIndex):
        return last.last_before(u, v, t)
    if last is None:
        return None
    return last.get((u, v))


def compensator(m: MarkovModel, u: int, v: int, t_a: float, t_b: float, last) -> float:
    """Exact integral of the dyad intensity over [t_a, t_b].

    With an :class:`EdgeEventIndex` the interval must not contain an event of
    the dyad strictly inside; with a plain dict the recorded last event is used.
    """
    if t_b < t_a:
        raise ValueError("t_a must be <= t_b")
    if isinstance(last, EdgeEventIndex):
        if last.has_event_inside(u, v, t_a, t_b):
            raise ValueError(f"interval ({t_a}, {t_b}) contains an event of dyad ({u}, {v}); split it")
        rec = last.last_at_or_before(u, v, t_a)
    else:
        rec = None if last is None else last.get((u, v))
    if rec is None or m.hazard is None:
        return poisson_rate(m.base, u, v) * (t_b - t_a)
    t_n, x_raw = rec
    if t_a < t_n:
        raise ValueError("interval starts before the dyad's last event")
    x = m.features(x_raw)[0]
    return cumulative_hazard(m.hazard, t_a - t_n, t_b - t_n, x)


def all_dyads(sources, destinations):
    """Enumerate U x V minus self-pairs as (src, dst) arrays, row-major by source."""
    sources = np.asarray(sources, dtype=np.int64)
    destinations = np.asarray(destinations, dtype=np.int64)
    us = np.repeat(sources, len(destinations))
    vs = np.tile(destinations, len(sources))
    keep = us != vs
    return us[keep], vs[keep]


def base_rate_sum(p: PoissonParams, sources, destinations, chunk: int = 1 << 20) -> float:
    total = 0.0
    for us, vs in iter_dyad_chunks(sources, destinations, chunk):
        total += float(softplus(poisson_logit(p, us, vs)).sum())
    return total


def iter_dyad_chunks(sources, destinations, chunk: int = 1 << 20):
    """Yield (us, vs) blocks of U x V minus self-pairs without materializing all of it."""
    sources = np.asarray(sources, dtype=np.int64)
    destinations = np.asarray(destinations, dtype=np.int64)
    rows = max(1, chunk // max(1, len(destinations)))
    for i in range(0, len(sources), rows):
        blk = sources[i:i + rows]
        us = np.repeat(blk, len(destinations))
        vs = np.tile(destinations, len(blk))
        keep = us != vs
        yield us[keep], vs[keep]


def init_model(n_nodes: int, d_embed: int = 20, cuts=None, decay: DecayConfig = DecayConfig(),
               standardizer: Standardizer | None = None, seed: int = 0, z_scale: float = 0.1,
               base_rate: float = 1.0, sources=None, destinations=None, labels=None) -> MarkovModel:
    """Fresh model: alpha = 0, small random embeddings, c set so rates are near ``base_rate``."""
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=z_scale, size=(n_nodes, d_embed))
    c = float(softplus_inv(base_rate)) / 2.0
    base = PoissonParams(np.zeros(n_nodes), z, c)
    hazard = None
    if cuts is not None:
        cuts = np.asarray(cuts, dtype=float)
        hazard = PwcHazard(cuts, np.zeros((len(cuts) + 1, N_FEATURES)))
    return MarkovModel(base, hazard, decay, standardizer or Standardizer.identity(),
                       sources, destinations, labels)
