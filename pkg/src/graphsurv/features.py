"""Exponentially decayed edge features computed incrementally from event streams."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from graphsurv import _backend

FEATURE_NAMES = ("deg_src", "deg_dst", "volume", "common_neighbors", "bias")
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class DecayConfig:
    """Per-feature decay rates, in 1 / (time unit)."""

    gamma_deg: float = 1.0
    gamma_vol: float = 1.0
    gamma_cn: float = 1.0

    def __post_init__(self):
        for name in ("gamma_deg", "gamma_vol", "gamma_cn"):
            g = getattr(self, name)
            if not (g > 0 and math.isfinite(g)):
                raise ValueError(f"{name} must be positive and finite, got {g}")

    def as_tuple(self):
        return (self.gamma_deg, self.gamma_vol, self.gamma_cn)

    @classmethod
    def from_history(cls, h) -> "DecayConfig":
        """Half-life equal to the median repeat time of a dyad (all three rates)."""
        gaps = dyad_gaps(h)
        if len(gaps) == 0 or np.median(gaps) <= 0:
            span = max(h.horizon - h.start, 1e-12)
            g = math.log(2) / span
        else:
            g = math.log(2) / float(np.median(gaps))
        return cls(g, g, g)


def dyad_gaps(h) -> np.ndarray:
    """Inter-arrival times pooled over all directed dyads."""
    if len(h) < 2:
        return np.empty(0)
    key = h.src * h.n_nodes + h.dst
    order = np.lexsort((h.times, key))
    k, t = key[order], h.times[order]
    same = k[1:] == k[:-1]
    return (t[1:] - t[:-1])[same]


class FeatureState:
    """Mutable decayed statistics of a history, queryable at or after its clock."""

    def __init__(self, n_nodes: int, decay: DecayConfig = DecayConfig(), backend=None):
        self.decay = decay
        self.core = _backend.get(backend).FeatureCore(n_nodes, *decay.as_tuple())

    @property
    def clock(self) -> float:
        return self.core.clock

    @property
    def n_nodes(self) -> int:
        return self.core.n_nodes

    def update(self, u: int, v: int, t: float) -> "FeatureState":
        self.core.update(int(u), int(v), float(t))
        return self

    def update_event(self, ev) -> "FeatureState":
        return self.update(ev.src, ev.dst, ev.time)

    def query(self, u: int, v: int, t: float) -> np.ndarray:
        if t < self.core.clock:
            raise ValueError(f"query at t={t} before state clock {self.core.clock}")
        out = np.empty(N_FEATURES)
        out[:4] = self.core.query(int(u), int(v), float(t))
        out[4] = 1.0
        return out

    def copy(self) -> "FeatureState":
        new = FeatureState.__new__(FeatureState)
        new.decay = self.decay
        new.core = self.core.copy()
        return new

    def to_dict(self) -> dict:
        return {"version": 1, "decay": list(self.decay.as_tuple()), "core": self.core.to_state()}

    @classmethod
    def from_dict(cls, d: dict, backend=None) -> "FeatureState":
        new = cls.__new__(cls)
        new.decay = DecayConfig(*d["decay"])
        new.core = _backend.get(backend).FeatureCore.from_state(d["core"])
        return new

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path, backend=None) -> "FeatureState":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), backend)

    @classmethod
    def from_history(cls, h, decay: DecayConfig, backend=None) -> "FeatureState":
        st = cls(h.n_nodes, decay, backend)
        _backend.get(backend).event_features(st.core, h.src, h.dst, h.times)
        return st


def with_bias(raw: np.ndarray) -> np.ndarray:
    out = np.ones((raw.shape[0], N_FEATURES))
    out[:, :4] = raw
    return out


def event_features(h, decay: DecayConfig, state: FeatureState | None = None, backend=None):
    """Raw (M, 4) features of every event's dyad at t_m^-; advances ``state`` if given."""
    if state is None:
        state = FeatureState(h.n_nodes, decay, backend)
    k = _backend.get(backend)
    return k.event_features(state.core, h.src, h.dst, h.times), state


def snapshot_at_events(h, decay: DecayConfig, dyads=None, backend=None):
    """One forward pass over ``h``.

    Returns the (M, 5) feature vectors of each event's own dyad at t_m^- and,
    if ``dyads`` (a sequence of ``(u, v)``) is given, an (M, len(dyads), 5)
    array with every requested dyad's features at each t_m^-.
    """
    st = FeatureState(h.n_nodes, decay, backend)
    own = np.ones((len(h), N_FEATURES))
    req = None if dyads is None else np.ones((len(h), len(dyads), N_FEATURES))
    core = st.core
    for m, (u, v, t) in enumerate(zip(h.src.tolist(), h.dst.tolist(), h.times.tolist())):
        own[m, :4] = core.query(u, v, t)
        if req is not None:
            for i, (a, b) in enumerate(dyads):
                req[m, i, :4] = core.query(a, b, t)
        core.update(u, v, t)
    return own, req


@dataclass
class Standardizer:
    """z-scoring of the four decayed features; the bias column is left at 1."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls) -> "Standardizer":
        return cls(np.zeros(4), np.ones(4))

    @classmethod
    def fit(cls, raw: np.ndarray) -> "Standardizer":
        raw = np.asarray(raw, dtype=float)[:, :4]
        if raw.shape[0] == 0:
            return cls.identity()
        mean = raw.mean(axis=0)
        scale = raw.std(axis=0)
        scale[scale <= 1e-12] = 1.0
        return cls(mean, scale)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """Map (n, 4) or (n, 5) raw features to standardized (n, 5) with bias."""
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        out = np.ones((raw.shape[0], N_FEATURES))
        out[:, :4] = (raw[:, :4] - self.mean) / self.scale
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))
