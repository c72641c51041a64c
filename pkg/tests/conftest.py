import math
import os

import numpy as np
import pytest

from graphsurv import _backend
from graphsurv.events import EventHistory

BACKENDS = _backend.available()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def random_events(rng, n_nodes, n_events, t_max=10.0):
    """Strictly increasing times, no self loops."""
    times = np.sort(rng.uniform(0.0, t_max, n_events))
    while len(np.unique(times)) < n_events:
        times = np.sort(rng.uniform(0.0, t_max, n_events))
    out = []
    for t in times:
        u = int(rng.integers(n_nodes))
        v = int((u + 1 + rng.integers(n_nodes - 1)) % n_nodes)
        out.append((u, v, float(t)))
    return out


def random_history(rng, n_nodes, n_events, t_max=10.0, horizon=None):
    ev = random_events(rng, n_nodes, n_events, t_max)
    return EventHistory.from_events(ev, horizon=t_max if horizon is None else horizon, n_nodes=n_nodes)


def brute_features(events, a, b, t, gammas, strict=False):
    """Decayed (deg_a, deg_b, vol_ab, cn_ab) at t, summed directly over the event list."""
    g_deg, g_vol, g_cn = gammas
    past = [(u, v, s) for u, v, s in events if (s < t if strict else s <= t)]
    deg_a = sum(math.exp(-g_deg * (t - s)) for u, v, s in past if a in (u, v))
    deg_b = sum(math.exp(-g_deg * (t - s)) for u, v, s in past if b in (u, v))
    vol = sum(math.exp(-g_vol * (t - s)) for u, v, s in past if (u, v) == (a, b))
    last = {}
    for u, v, s in past:
        for x, y in ((u, v), (v, u)):
            last[(x, y)] = max(last.get((x, y), -math.inf), s)
    nb_a = {y for (x, y) in last if x == a}
    nb_b = {y for (x, y) in last if x == b}
    cn = 0.0
    for w in (nb_a & nb_b) - {a, b}:
        cn += math.exp(-g_cn * (t - max(last[(a, w)], last[(b, w)])))
    return np.array([deg_a, deg_b, vol, cn])


def acceptance_env(name):
    return os.environ.get(name) or None


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
