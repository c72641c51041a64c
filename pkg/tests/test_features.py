import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_features, random_events, random_history
from graphsurv.events import EventHistory
from graphsurv.features import (
    DecayConfig,
    FeatureState,
    Standardizer,
    event_features,
    snapshot_at_events,
)


def test_first_event_no_decay(backend):
    s = FeatureState(3, DecayConfig(1, 1, 1), backend)
    s.update(0, 1, 0.0)
    x = s.query(0, 1, 0.0)
    assert x.tolist() == [1.0, 1.0, 1.0, 0.0, 1.0]


def test_second_event_degree(backend):
    s = FeatureState(3, DecayConfig(1, 1, 1), backend)
    s.update(0, 1, 0.0).update(0, 1, 1.0)
    assert s.query(0, 1, 1.0)[0] == pytest.approx(math.exp(-1) + 1, rel=1e-15)


def test_out_of_order_update(backend):
    s = FeatureState(3, DecayConfig(), backend)
    s.update(0, 1, 2.0)
    with pytest.raises(ValueError):
        s.update(1, 2, 1.0)
    with pytest.raises(ValueError):
        s.query(0, 1, 1.0)


def test_fresh_pair_and_unknown_node(backend):
    s = FeatureState(3, DecayConfig(), backend)
    assert s.query(0, 1, 5.0).tolist() == [0, 0, 0, 0, 1]
    s.update(0, 1, 1.0)
    assert s.query(7, 2, 2.0).tolist() == [0, 0, 0, 0, 1]


def test_single_event_query_formula(backend):
    s = FeatureState(2, DecayConfig(0.5, 0.5, 0.5), backend)
    s.update(0, 1, 0.0)
    x = s.query(0, 1, 2.0)
    e = math.exp(-1)
    assert x[:4] == pytest.approx([e, e, e, 0.0], rel=1e-15)


def test_triangle_common_neighbour(backend):
    ev = [(0, 2, 1.0), (1, 2, 2.0)]
    s = FeatureState(3, DecayConfig(0.3, 0.4, 0.5), backend)
    for u, v, t in ev:
        s.update(u, v, t)
    x = s.query(0, 1, 3.0)
    assert x[3] > 0
    np.testing.assert_allclose(x[:4], brute_features(ev, 0, 1, 3.0, (0.3, 0.4, 0.5)), rtol=1e-12)


def test_ten_random_events_match_oracle(backend):
    rng = np.random.default_rng(3)
    ev = random_events(rng, 5, 10)
    gam = (0.7, 0.2, 1.3)
    s = FeatureState(5, DecayConfig(*gam), backend)
    for u, v, t in ev:
        s.update(u, v, t)
    t = ev[-1][2] + 0.5
    for a in range(5):
        for b in range(5):
            if a != b:
                np.testing.assert_allclose(s.query(a, b, t)[:4], brute_features(ev, a, b, t, gam),
                                           rtol=1e-12, atol=1e-300)


def test_snapshot_first_event_zero_and_repeat_volume(backend):
    h = EventHistory.from_events([(0, 1, 0.0), (0, 1, 1.0), (0, 1, 2.0)], n_nodes=3)
    g = 0.8
    own, req = snapshot_at_events(h, DecayConfig(g, g, g), dyads=[(0, 1), (1, 2), (2, 0)], backend=backend)
    assert own[0].tolist() == [0, 0, 0, 0, 1]
    assert np.all(req[0, :, :4] == 0)
    assert own[2, 2] == pytest.approx(math.exp(-2 * g) + math.exp(-g), rel=1e-14)


def test_snapshot_fifty_events_match_oracle(backend):
    rng = np.random.default_rng(11)
    ev = random_events(rng, 6, 50)
    h = EventHistory.from_events(ev, n_nodes=6)
    gam = (0.4, 0.9, 0.25)
    dyads = [(a, b) for a in range(6) for b in range(6) if a != b]
    own, req = snapshot_at_events(h, DecayConfig(*gam), dyads=dyads, backend=backend)
    for m, (u, v, t) in enumerate(ev):
        np.testing.assert_allclose(own[m, :4], brute_features(ev, u, v, t, gam, strict=True), rtol=1e-12)
        for i, (a, b) in enumerate(dyads):
            np.testing.assert_allclose(req[m, i, :4], brute_features(ev, a, b, t, gam, strict=True),
                                       rtol=1e-12, atol=1e-300)
        assert np.all(req[m, :, 4] == 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 25),
       st.tuples(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.01, 5)))
def test_lazy_decay_equivalence(seed, n_events, gam):
    rng = np.random.default_rng(seed)
    ev = random_events(rng, 4, n_events)
    h = EventHistory.from_events(ev, n_nodes=4)
    raw, state = event_features(h, DecayConfig(*gam))
    for m, (u, v, t) in enumerate(ev):
        np.testing.assert_allclose(raw[m], brute_features(ev, u, v, t, gam, strict=True),
                                   rtol=1e-12, atol=1e-300)
    t = ev[-1][2] + rng.uniform(0, 3)
    a, b = 0, 3
    np.testing.assert_allclose(state.query(a, b, t)[:4], brute_features(ev, a, b, t, gam),
                               rtol=1e-12, atol=1e-300)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 5), st.floats(0, 5))
def test_monotone_decay(seed, d1, d2):
    rng = np.random.default_rng(seed)
    h = random_history(rng, 4, 12)
    _, s = event_features(h, DecayConfig(0.5, 1.0, 2.0))
    t1 = s.clock + min(d1, d2)
    t2 = s.clock + max(d1, d2)
    for a, b in [(0, 1), (2, 3), (1, 3)]:
        assert np.all(s.query(a, b, t2)[:4] <= s.query(a, b, t1)[:4])


def test_gamma_limits():
    rng = np.random.default_rng(5)
    h = random_history(rng, 4, 15)
    _, s = event_features(h, DecayConfig(1e6, 1e6, 1e6))
    assert np.all(s.query(0, 1, s.clock + 1e-3)[:4] < 1e-300)
    _, s = event_features(h, DecayConfig(1e-12, 1e-12, 1e-12))
    for u in range(4):
        count = int(np.sum((h.src == u) | (h.dst == u)))
        assert s.query(u, (u + 1) % 4, s.clock)[0] == pytest.approx(count, rel=1e-9)


def test_no_look_ahead_truncation():
    rng = np.random.default_rng(8)
    h = random_history(rng, 5, 40)
    dec = DecayConfig(0.3, 0.3, 0.3)
    full, _ = event_features(h, dec)
    cut = 25
    trunc = h.subset(np.arange(len(h)) < cut, h.start, h.horizon)
    part, _ = event_features(trunc, dec)
    assert np.array_equal(full[:cut], part)


def test_decay_config_validation_and_default():
    with pytest.raises(ValueError):
        DecayConfig(0.0, 1, 1)
    with pytest.raises(ValueError):
        DecayConfig(1, float("inf"), 1)
    h = EventHistory.from_events([(0, 1, 0.0), (0, 1, 2.0), (1, 2, 3.0), (1, 2, 7.0)])
    d = DecayConfig.from_history(h)
    assert d.gamma_deg == pytest.approx(math.log(2) / 3.0)


def test_state_serialization_round_trip(tmp_path, backend):
    rng = np.random.default_rng(2)
    h = random_history(rng, 5, 30)
    _, s = event_features(h, DecayConfig(0.2, 0.6, 0.9), backend=backend)
    p = tmp_path / "state.json"
    s.save(p)
    s2 = FeatureState.load(p, backend)
    assert s2.clock == s.clock
    for a, b in [(0, 1), (1, 4), (3, 2)]:
        assert np.array_equal(s.query(a, b, s.clock + 1), s2.query(a, b, s.clock + 1))
    c = s.copy()
    c.update(0, 1, s.clock + 2)
    assert not np.array_equal(c.query(0, 1, s.clock + 3), s.query(0, 1, s.clock + 3))


def test_standardizer():
    raw = np.array([[1.0, 2.0, 0.0, 5.0], [3.0, 2.0, 0.0, 7.0]])
    st_ = Standardizer.fit(raw)
    out = st_.apply(raw)
    assert out.shape == (2, 5)
    assert np.all(out[:, 4] == 1)
    np.testing.assert_allclose(out[:, 0], [-1, 1])
    assert np.all(out[:, 1] == 0)
    back = Standardizer.from_dict(st_.to_dict())
    assert np.array_equal(back.apply(raw), out)
