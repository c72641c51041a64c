"""Exit criteria. Each test records one PASS/FAIL line shown in the terminal summary.

Criterion 9 needs the Enron and CollegeMsg raw files; point GRAPHSURV_ENRON and
GRAPHSURV_COLLEGEMSG at them (comma separated ``src,dst,time`` rows) to run it.
"""
import functools
import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

import conftest
from conftest import acceptance_env, random_history
from graphsurv import _backend
from graphsurv.cli import main
from graphsurv.evaluation import burstiness, burstiness_report, pairwise_auc, roc_auc
from graphsurv.features import DecayConfig
from graphsurv.intensity import EdgeEventIndex, all_dyads, compensator, init_model, poisson_rate
from graphsurv.simulation import SimConfig, simulate, simulate_run
from graphsurv.training import (
    ContrastiveConfig,
    OptimizerConfig,
    fit,
    initial_model,
    nll_contrastive,
    nll_exact,
    prepare,
)
from test_intensity import _quad_intensity, random_model
from test_simulation import single_edge_poisson
from test_training import _fd_check, random_instance

pytestmark = pytest.mark.acceptance


def criterion(n):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                ok, detail = fn(*args, **kwargs)
            except pytest.skip.Exception as exc:
                conftest.ACCEPTANCE[n] = ("SKIP", str(exc))
                raise
            except Exception as exc:
                conftest.ACCEPTANCE[n] = ("FAIL", f"{type(exc).__name__}: {exc}")
                raise
            conftest.ACCEPTANCE[n] = ("PASS" if ok else "FAIL", detail)
            print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
            assert ok, detail
        return run
    return wrap


@criterion(1)
def test_gradient_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10):
        m, h = random_instance(rng, n=int(rng.integers(3, 6)), M=int(rng.integers(5, 31)))
        worst = max(worst, _fd_check(m, h, step=1e-5))
    dt = time.perf_counter() - t0
    return worst < 1e-5 and dt < 10, f"max rel err {worst:.2e}, {dt:.2f} s"


@criterion(2)
def test_compensator_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    worst, done = 0.0, 0
    while done < 100:
        m = random_model(rng)
        h = random_history(rng, 4, 12)
        idx = EdgeEventIndex(h, m.decay)
        u = int(rng.integers(4))
        v = int((u + 1 + rng.integers(3)) % 4)
        ts = [h.start] + idx.event_times(u, v) + [h.horizon + 5]
        i = int(rng.integers(len(ts) - 1))
        a, b = np.sort(rng.uniform(ts[i], ts[i + 1], 2))
        if b - a < 1e-6:
            continue
        got = compensator(m, u, v, float(a), float(b), idx)
        want = _quad_intensity(m, idx, u, v, float(a), float(b))
        worst = max(worst, abs(got - want) / abs(want))
        done += 1
    dt = time.perf_counter() - t0
    return worst < 1e-8 and dt < 5, f"max rel err {worst:.2e} over 100 cases, {dt:.2f} s"


@pytest.mark.slow
@criterion(3)
def test_contrastive_unbiased():
    rng = np.random.default_rng(6)
    m, h = random_instance(rng, n=3, M=20)
    assert len(all_dyads(m.sources, m.destinations)[0]) == 6
    exact = nll_exact(m, h).l_neg
    vals = np.array([nll_contrastive(m, h, ContrastiveConfig(k=2, seed=s)).l_neg for s in range(10_000)])
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    z = abs(vals.mean() - exact) / se
    return z < 3, f"exact {exact:.6f}, mean {vals.mean():.6f}, |diff|/se = {z:.2f}"


@criterion(4)
def test_thinning_poisson():
    lam, T = 2.0, 1000.0
    m = single_edge_poisson(lam)
    lines = []
    ok = True
    for b in _backend.available():
        good = 0
        for seed in range(10):
            h = simulate(m, SimConfig(T=T, seed=seed), b)
            gaps = np.diff(np.r_[0.0, h.times])
            p = stats.kstest(gaps, "expon", args=(0, 1 / lam)).pvalue
            good += p > 0.01 and abs(len(h) - lam * T) <= 3 * math.sqrt(lam * T)
        ok &= good >= 9
        lines.append(f"{b}: {good}/10 seeds")
    return ok, ", ".join(lines)


@criterion(5)
def test_parameter_recovery():
    t0 = time.perf_counter()
    # (a) Poisson rates
    # every dyad gets ~800 events, so sampling noise is well inside the tolerance
    m = init_model(3, 2, seed=4, z_scale=0.5, base_rate=1.0)
    m.base.alpha[:] = [0.2, -0.1, 0.0]
    h = simulate_run(m, SimConfig(T=1e9, N=5000, seed=1)).history
    h.horizon = float(h.times[-1])
    f = fit(initial_model(h, "poisson", d_embed=2, seed=0), h,
            OptimizerConfig(learning_rate=0.05, weight_decay=0.0, epochs=600), None)
    us, vs = all_dyads(m.sources, m.destinations)
    err_a = float(np.max(np.abs(poisson_rate(f.model.base, us, vs) / poisson_rate(m.base, us, vs) - 1)))

    # (b) Markov-PWC with J=3, bias-only hazard so the true levels are constants;
    # cuts chosen so each piece holds a sizeable share of the gaps
    decay = DecayConfig(1.0, 1.0, 1.0)
    m = init_model(3, 2, cuts=[0.3, 1.0], decay=decay, seed=2, base_rate=0.05)
    true_lv = np.array([2.0, 1.0, 0.5])
    m.hazard.theta[:, -1] = np.log(true_lv)
    h = simulate_run(m, SimConfig(T=1e9, N=5000, seed=5)).history
    h.horizon = float(h.times[-1])
    m0 = initial_model(h, "markov-pwc", d_embed=2, seed=0, cuts=[0.3, 1.0], decay=decay)
    f = fit(m0, h, OptimizerConfig(learning_rate=0.02, weight_decay=0.0, epochs=600), None)
    xbar = f.model.standardizer.apply(prepare(h, decay).raw).mean(axis=0)
    lv = np.exp(f.model.hazard.theta @ xbar)
    err_b = float(np.max(np.abs(lv / true_lv - 1)))
    dt = time.perf_counter() - t0
    ok = err_a < 0.1 and err_b < 0.1 and dt < 120
    return ok, f"poisson max rel err {err_a:.3f}, levels {np.round(lv, 3).tolist()} (rel err {err_b:.3f}), {dt:.1f} s"


@criterion(6)
def test_burstiness_formula():
    _, b_per = burstiness(np.arange(0.0, 50.0, 2.5))
    rng = np.random.default_rng(8)
    _, b_exp = burstiness(np.cumsum(rng.exponential(1.0, 10_000)))
    # gaps 1, 1, 4 from 4 timestamps: mean 2, squared deviations 1 + 1 + 4, over (4 - 1) * 2^2
    cv_hand = math.sqrt(6.0 / 12.0)
    cv, b = burstiness([0.0, 1.0, 2.0, 6.0])
    ok = b_per == -1.0 and abs(b_exp) < 0.05 and abs(cv - cv_hand) < 1e-12 \
        and abs(b - (cv_hand - 1) / (cv_hand + 1)) < 1e-12
    return ok, f"periodic B={b_per}, exponential |B|={abs(b_exp):.4f}, 3-gap cv err {abs(cv - cv_hand):.1e}"


@criterion(7)
def test_simulated_burstiness():
    m = init_model(6, 3, cuts=[0.5, 2.0], decay=DecayConfig(0.5, 0.5, 0.5), seed=1, base_rate=0.02)
    m.base.z[:] = 0
    mu = float(poisson_rate(m.base, 0, 1))
    levels = np.array([0.2, 0.05, 0.01])
    m.hazard.theta[:, -1] = np.log(levels)
    assert levels[0] >= 5 * mu
    rep = burstiness_report(simulate(m, SimConfig(T=5000, seed=1)))
    frac = rep.fraction_in(0.0, 1.0)
    return frac >= 0.2 and len(rep.edges) > 0, \
        f"first piece {levels[0] / mu:.1f}x base, {frac:.0%} of {len(rep.edges)} dyads with 0 < B < 1"


@settings(max_examples=500, deadline=None)
@given(st.integers(2, 200), st.integers(1, 8), st.integers(0, 2**32 - 1))
def _auc_case(n, levels, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    s = rng.integers(0, levels, n).astype(float) if levels < 8 else rng.normal(size=n)
    assert roc_auc(s, y).auc == pairwise_auc(s, y)


@criterion(8)
def test_auc_oracle():
    _auc_case()
    return True, "rank AUC == pairwise count on 500 instances of <= 200 pairs"


def _table2(raw, tmp, tag):
    ev, mk, po, out = (tmp / f"{tag}.csv", tmp / f"{tag}_m.json", tmp / f"{tag}_p.json", tmp / tag)
    assert main(["ingest", "--input", raw, "--output", str(ev), "--dedup", "--max-events", "20000"]) == 0
    epochs = acceptance_env("GRAPHSURV_ACCEPT_EPOCHS") or "50"
    common = ["--events", str(ev), "--train-frac", "0.8", "--epochs", epochs, "--seed", "0"]
    assert main(["fit", *common, "--output", str(mk), "--model", "markov-pwc",
                 "--lr", "0.01", "--weight-decay", "1e-4"]) == 0
    assert main(["fit", *common, "--output", str(po), "--model", "poisson"]) == 0
    assert main(["eval", "--events", str(ev), "--ckpt-markov", str(mk), "--ckpt-poisson", str(po),
                 "--train-frac", "0.8", "--val-frac", "0.1", "--n-seeds", "10", "--output-dir", str(out)]) == 0
    return {k: v["mean"] for k, v in json.loads((out / "auc.json").read_text())["auc"].items()}


@pytest.mark.slow
@criterion(9)
def test_link_prediction_table(tmp_path):
    paths = {"enron": acceptance_env("GRAPHSURV_ENRON"), "collegemsg": acceptance_env("GRAPHSURV_COLLEGEMSG")}
    if not all(paths.values()):
        pytest.skip("datasets not available: set GRAPHSURV_ENRON and GRAPHSURV_COLLEGEMSG")
    targets = {"enron": 0.78, "collegemsg": 0.72}
    ok, parts = True, []
    for tag, raw in paths.items():
        a = _table2(raw, tmp_path, tag)
        order = a["markov_pwc"] > a["preferential_attachment"] > a["poisson"] > a["random"]
        ok &= order and abs(a["random"] - 0.5) <= 0.05 and a["markov_pwc"] >= targets[tag]
        parts.append(f"{tag}: " + " ".join(f"{k}={v:.3f}" for k, v in a.items()))
    return ok, "; ".join(parts)


def _run_twice(tmp_path, argv_for, files):
    blobs = []
    for run in ("r1", "r2"):
        d = tmp_path / run
        d.mkdir(exist_ok=True)
        assert main(argv_for(d)) == 0
        blobs.append([(d / f).read_bytes() for f in files])
    return blobs[0] == blobs[1]


@criterion(10)
def test_cli_determinism(tmp_path):
    rng = np.random.default_rng(0)
    raw = tmp_path / "raw.csv"
    t = np.cumsum(rng.exponential(1.0, 1500))
    u = rng.integers(6, size=len(t))
    v = (u + 1 + rng.integers(5, size=len(t))) % 6
    raw.write_text("".join(f"n{a},n{b},{float(x)!r}\n" for a, b, x in zip(u, v, t)))
    ev = tmp_path / "ev.csv"
    main(["ingest", "--input", str(raw), "--output", str(ev)])
    ck = tmp_path / "m.json"
    main(["fit", "--events", str(ev), "--output", str(ck), "--epochs", "2", "--lr", "0.01", "--d-embed", "2",
          "--j", "4", "--batch-size", "300"])
    checks = {
        "ingest": _run_twice(tmp_path, lambda d: ["ingest", "--input", str(raw), "--output", str(d / "e.csv"),
                                                  "--jitter-ties", "1e-9"], ["e.csv", "e.csv.json"]),
        "fit": _run_twice(tmp_path, lambda d: ["fit", "--events", str(ev), "--output", str(d / "m.json"),
                                               "--epochs", "2", "--lr", "0.01", "--d-embed", "2", "--j", "4",
                                               "--batch-size", "300", "--seed", "4"],
                          ["m.json", "m.json.trace.csv"]),
        "simulate": _run_twice(tmp_path, lambda d: ["simulate", "--ckpt", str(ck), "--t-max", "200",
                                                    "--seed", "7", "--output", str(d / "s.csv")],
                               ["s.csv", "s.csv.manifest.json"]),
        "burstiness": _run_twice(tmp_path, lambda d: ["burstiness", "--events", str(ev), "--output-dir", str(d)],
                                 ["burstiness_edges.csv", "burstiness_hist.csv"]),
        "eval": _run_twice(tmp_path, lambda d: ["eval", "--events", str(ev), "--ckpt-markov", str(ck),
                                                "--n-seeds", "2", "--output-dir", str(d)],
                           ["auc.json", "roc_markov_pwc.csv", "roc_random.csv"]),
    }
    return all(checks.values()), ", ".join(f"{k}={'identical' if v else 'DIFFERENT'}" for k, v in checks.items())
