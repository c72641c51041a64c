"""Command-line entry point: ``graphsurv <ingest|fit|simulate|burstiness|eval>``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from graphsurv.events import IngestError, SplitSpec, ingest_csv, preprocess, read_events, split, write_events
from graphsurv.features import DecayConfig
from graphsurv.intensity import CheckpointError, MarkovModel, checkpoint_hash

EXIT_INPUT = 2
EXIT_TRAINING = 3
EXIT_CHECKPOINT = 4
EXIT_EVAL = 5

log = logging.getLogger("graphsurv")


class UsageError(ValueError):
    pass


class SplitError(ValueError):
    pass


# option tables: dest -> default. Flags default to None so that an explicit
# flag beats the config file, which beats these defaults.

DEFAULTS = {
    "ingest": {
        "input": None, "output": None, "columns": "0,1,2", "delimiter": None,
        "dedup": True, "max_events": None, "jitter_ties": None, "rescale": None,
        "keep_self_loops": False,
    },
    "fit": {
        "events": None, "output": None, "trace": None, "model": "markov-pwc",
        "j": 10, "cuts": "quantile", "d_embed": 20, "decay": "auto", "standardize": True,
        "epochs": 10, "learning_rate": 0.8, "weight_decay": 0.9, "lr_decay": 1.0,
        "batch_size": None, "k": 10, "exact": False, "train_frac": None, "t_train": None,
        "seed": None,
    },
    "simulate": {
        "ckpt": None, "output": None, "t_max": None, "t0": 0.0, "max_events": 10**9,
        "warm_start": None, "seed": None, "backend": None,
    },
    "burstiness": {
        "events": None, "output_dir": None, "min_events": 3, "bins": 20,
    },
    "eval": {
        "events": None, "output_dir": None, "ckpt_markov": None, "ckpt_poisson": None,
        "train_frac": 0.8, "val_frac": 0.1, "t_train": None, "t_val": None, "on": "test",
        "n_seeds": 10, "n_neg": 1, "seed": None, "jobs": 1,
    },
}

# paths that name outputs; excluded from the recorded config hash
OUTPUT_KEYS = {"output", "output_dir", "trace"}


def _bool_flag(p, name, dest, help_):
    p.add_argument(f"--{name}", dest=dest, action="store_const", const=True, default=None, help=help_)
    p.add_argument(f"--no-{name}", dest=dest, action="store_const", const=False, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graphsurv", description="Markov survival models of temporal networks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read a raw event file and write the canonical form")
    p.add_argument("--config")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--columns", help="0-based src,dst,time column indices")
    p.add_argument("--delimiter")
    _bool_flag(p, "dedup", "dedup", "drop events sharing a timestamp with an earlier one")
    p.add_argument("--max-events", type=int)
    p.add_argument("--jitter-ties", type=float)
    p.add_argument("--rescale", type=float, help="map [t_min, t_max] onto [0, RESCALE]")
    _bool_flag(p, "keep-self-loops", "keep_self_loops", "keep u -> u events")

    p = sub.add_parser("fit", help="fit a model to a canonical event file")
    p.add_argument("--config")
    p.add_argument("--events")
    p.add_argument("--output", help="checkpoint path")
    p.add_argument("--trace", help="loss trace CSV (default: <output>.trace.csv)")
    p.add_argument("--model", choices=("poisson", "markov-pwc"))
    p.add_argument("--j", type=int, help="number of hazard pieces")
    p.add_argument("--cuts", help="'quantile' (alias 'deciles') or comma-separated cut-points")
    p.add_argument("--d-embed", type=int)
    p.add_argument("--decay", help="'auto' or a decay rate")
    _bool_flag(p, "standardize", "standardize", "z-score the features")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--lr-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--k", type=int, help="contrastive samples per slice")
    _bool_flag(p, "exact", "exact", "exact likelihood instead of contrastive sampling")
    p.add_argument("--train-frac", type=float)
    p.add_argument("--t-train", type=float)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="sample a history from a checkpoint")
    p.add_argument("--config")
    p.add_argument("--ckpt")
    p.add_argument("--output")
    p.add_argument("--t-max", type=float)
    p.add_argument("--t0", type=float)
    p.add_argument("--max-events", type=int)
    p.add_argument("--warm-start", help="event file whose history conditions the simulation")
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=("python", "cython"))

    p = sub.add_parser("burstiness", help="per-dyad burstiness and histogram")
    p.add_argument("--config")
    p.add_argument("--events")
    p.add_argument("--output-dir")
    p.add_argument("--min-events", type=int)
    p.add_argument("--bins", type=int)

    p = sub.add_parser("eval", help="future link prediction AUC")
    p.add_argument("--config")
    p.add_argument("--events")
    p.add_argument("--output-dir")
    p.add_argument("--ckpt-markov")
    p.add_argument("--ckpt-poisson")
    p.add_argument("--train-frac", type=float)
    p.add_argument("--val-frac", type=float)
    p.add_argument("--t-train", type=float)
    p.add_argument("--t-val", type=float)
    p.add_argument("--on", choices=("val", "test"))
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--n-neg", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    return ap


def load_config(path, command: str) -> dict:
    """Section ``command`` of a JSON config, merged over its top-level ``seed``."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: {exc}")
    if not isinstance(raw, dict):
        raise UsageError(f"config {path}: expected a JSON object")
    unknown = set(raw) - set(DEFAULTS) - {"seed"}
    if unknown:
        raise UsageError(f"config {path}: unknown keys {sorted(unknown)}")
    for cmd, sect in raw.items():
        if cmd == "seed":
            continue
        if not isinstance(sect, dict):
            raise UsageError(f"config {path}: section {cmd!r} must be an object")
        bad = {k.replace("-", "_") for k in sect} - set(DEFAULTS[cmd])
        if bad:
            raise UsageError(f"config {path}: unknown keys in {cmd!r}: {sorted(bad)}")
    out = {k.replace("-", "_"): v for k, v in raw.get(command, {}).items()}
    if "seed" in raw and "seed" in DEFAULTS[command] and "seed" not in out:
        out["seed"] = raw["seed"]
    return out


def resolve(args: argparse.Namespace) -> dict:
    cmd = args.command
    cfg = load_config(args.config, cmd) if args.config else {}
    opts = {}
    for key, default in DEFAULTS[cmd].items():
        val = getattr(args, key, None)
        if val is None:
            val = cfg.get(key, default)
        opts[key] = val
    if "seed" in opts and opts["seed"] is None:
        env = os.environ.get("GRAPHSURV_SEED")
        try:
            opts["seed"] = int(env) if env not in (None, "") else 0
        except ValueError:
            raise UsageError(f"GRAPHSURV_SEED must be an integer, got {env!r}")
    return opts


def config_hash(opts: dict) -> str:
    kept = {k: v for k, v in opts.items() if k not in OUTPUT_KEYS}
    return hashlib.sha256(json.dumps(kept, sort_keys=True).encode()).hexdigest()


def _require(opts: dict, *keys):
    missing = [k for k in keys if opts.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# commands

def cmd_ingest(opts: dict) -> int:
    _require(opts, "input", "output")
    try:
        cols = tuple(int(c) for c in str(opts["columns"]).split(","))
    except ValueError:
        raise UsageError(f"bad --columns {opts['columns']!r}")
    if len(cols) != 3:
        raise UsageError("--columns needs three indices")
    h = ingest_csv(opts["input"], columns=cols, delimiter=opts["delimiter"])
    h = preprocess(h, dedup_simultaneous=bool(opts["dedup"]), max_events=opts["max_events"],
                   jitter_ties=opts["jitter_ties"], drop_self_loops=not opts["keep_self_loops"],
                   rescale=opts["rescale"])
    write_events(h, opts["output"])
    st = h.stats()
    print(f"M={st['M']} |U|={st['n_src']} |V|={st['n_dst']} nodes={st['n_nodes']} "
          f"dyads={st['n_dyads_observed']} directed={st['directed']} T={st['T']!r} raw={h.raw_count}")
    return 0


def _parse_cuts(spec) -> list | None:
    if isinstance(spec, (list, tuple)):
        return [float(c) for c in spec]
    if spec in (None, "quantile", "deciles"):
        return None
    try:
        return [float(c) for c in str(spec).split(",") if c.strip()]
    except ValueError:
        raise UsageError(f"bad --cuts {spec!r}")


def cmd_fit(opts: dict) -> int:
    from graphsurv.training import ContrastiveConfig, OptimizerConfig, fit, initial_model, nll_exact

    _require(opts, "events", "output")
    h = read_events(opts["events"])
    if opts["t_train"] is not None or opts["train_frac"] is not None:
        if opts["t_train"] is not None:
            t_train = float(opts["t_train"])
        else:
            t_train = SplitSpec.from_fractions(h, float(opts["train_frac"]), 0.0).t_train
        h = split(h, SplitSpec(t_train, h.horizon, h.horizon))[0]
    if opts["decay"] in (None, "auto"):
        decay = DecayConfig.from_history(h)
    else:
        try:
            g = float(opts["decay"])
        except ValueError:
            raise UsageError(f"bad --decay {opts['decay']!r}")
        decay = DecayConfig(g, g, g)
    cuts = _parse_cuts(opts["cuts"])
    m0 = initial_model(h, opts["model"], d_embed=int(opts["d_embed"]), n_pieces=int(opts["j"]),
                       decay=decay, standardize=bool(opts["standardize"]), seed=int(opts["seed"]),
                       cuts=cuts)
    opt = OptimizerConfig(learning_rate=float(opts["learning_rate"]),
                          weight_decay=float(opts["weight_decay"]), epochs=int(opts["epochs"]),
                          batch_size=opts["batch_size"], lr_decay=float(opts["lr_decay"]))
    c = None if opts["exact"] else ContrastiveConfig(k=int(opts["k"]), seed=int(opts["seed"]))
    res = fit(m0, h, opt, c)
    res.model.save(opts["output"])
    trace = opts["trace"] or str(opts["output"]) + ".trace.csv"
    with open(trace, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "batch", "l_pos", "l_neg", "total"])
        for e, b, lp, ln, tot in res.trace:
            w.writerow([e, b, repr(lp), repr(ln), repr(tot)])
    final = nll_exact(res.model, h)
    print(f"model={res.model.kind} epochs={opt.epochs} events={len(h)} final_nll={final.total!r}")
    return 0


def _relabel(h, m: MarkovModel):
    """Express ``h`` in the checkpoint's node ids."""
    from graphsurv.events import EventHistory, NodeTable

    index = {lab: i for i, lab in enumerate(m.labels)}
    try:
        ids = np.array([index[lab] for lab in h.nodes.labels], dtype=np.int64)
    except KeyError as exc:
        raise UsageError(f"warm-start node {exc.args[0]!r} is not in the checkpoint")
    return EventHistory(ids[h.src], ids[h.dst], h.times, NodeTable(m.labels), horizon=h.horizon,
                        start=h.start, sources=m.sources, destinations=m.destinations)


def cmd_simulate(opts: dict) -> int:
    from graphsurv.simulation import SimConfig, simulate_run

    _require(opts, "ckpt", "output", "t_max")
    m = MarkovModel.load(opts["ckpt"])
    warm = _relabel(read_events(opts["warm_start"]), m) if opts["warm_start"] else None
    cfg = SimConfig(T=float(opts["t_max"]), N=int(opts["max_events"]), t0=float(opts["t0"]),
                    seed=int(opts["seed"]), warm_start=warm)
    res = simulate_run(m, cfg, opts["backend"])
    write_events(res.history, opts["output"])
    manifest = {
        "seed": cfg.seed,
        "checkpoint_sha256": checkpoint_hash(opts["ckpt"]),
        "T": cfg.T,
        "N": cfg.N,
        "t0": res.history.start,
        "n_events": res.n_events,
        "n_proposals": res.n_proposals,
        "acceptance_rate": res.acceptance_rate,
        "config_sha256": config_hash({k: v for k, v in opts.items() if k != "backend"}),
    }
    _dump_json(str(opts["output"]) + ".manifest.json", manifest)
    print(f"events={res.n_events} proposals={res.n_proposals} acceptance={res.acceptance_rate:.4f}")
    return 0


def cmd_burstiness(opts: dict) -> int:
    from graphsurv.evaluation import burstiness_report

    _require(opts, "events", "output_dir")
    h = read_events(opts["events"])
    rep = burstiness_report(h, int(opts["min_events"]), int(opts["bins"]))
    out = Path(opts["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    labels = h.nodes.labels
    with open(out / "burstiness_edges.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "n_events", "cv", "B"])
        for e in rep.edges:
            w.writerow([labels[e.src], labels[e.dst], e.n_events, repr(e.cv), repr(e.B)])
    with open(out / "burstiness_hist.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, n in zip(rep.bin_edges[:-1].tolist(), rep.bin_edges[1:].tolist(), rep.counts.tolist()):
            w.writerow([repr(lo), repr(hi), n])
    print(f"dyads={len(rep.edges)} share_in_(0,1)={rep.fraction_in(0.0, 1.0):.4f}")
    return 0


def _load_model_for(path, h) -> MarkovModel:
    m = MarkovModel.load(path)
    if m.labels[:h.n_nodes] != h.nodes.labels:
        raise CheckpointError(f"checkpoint {path} was fitted on a different node set")
    return m


def _eval_seed(args):
    from graphsurv.evaluation import make_labeled_pairs, roc_auc, score

    h, h_eval, scorers, seed, n_neg = args
    pairs = make_labeled_pairs(h_eval, n_neg, seed)
    out = {}
    for sc in scorers:
        if sc.name == "random":
            from graphsurv.evaluation import Scorer
            sc = Scorer("random", seed=sc.seed + seed)
        out[sc.name] = roc_auc(score(sc, pairs, h), pairs.labels)
    return out, len(pairs)


def cmd_eval(opts: dict) -> int:
    from graphsurv.evaluation import Scorer

    _require(opts, "events", "output_dir")
    h = read_events(opts["events"])
    try:
        if opts["t_train"] is not None:
            t_val = opts["t_val"] if opts["t_val"] is not None else opts["t_train"]
            s = SplitSpec(float(opts["t_train"]), float(t_val), h.horizon)
        else:
            s = SplitSpec.from_fractions(h, float(opts["train_frac"]), float(opts["val_frac"]))
        _, h_val, h_test = split(h, s)
    except ValueError as exc:
        raise SplitError(str(exc))
    h_eval = h_test if opts["on"] == "test" else h_val
    if len(h_eval) == 0:
        raise SplitError(f"{opts['on']} split is empty")
    if len(h_eval.destinations) < 3:
        raise SplitError("fewer than 3 candidate destinations")

    seed = int(opts["seed"])
    scorers = []
    if opts["ckpt_markov"]:
        scorers.append(Scorer("markov_pwc", _load_model_for(opts["ckpt_markov"], h)))
    scorers.append(Scorer("preferential_attachment"))
    if opts["ckpt_poisson"]:
        scorers.append(Scorer("poisson", _load_model_for(opts["ckpt_poisson"], h)))
    scorers.append(Scorer("random", seed=seed))
    seeds = [seed + i for i in range(int(opts["n_seeds"]))]
    jobs = [(h, h_eval, scorers, sd, int(opts["n_neg"])) for sd in seeds]
    if int(opts["jobs"]) > 1:
        with ProcessPoolExecutor(int(opts["jobs"])) as ex:
            results = list(ex.map(_eval_seed, jobs))
    else:
        results = [_eval_seed(j) for j in jobs]

    out = Path(opts["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    summary = {"seeds": seeds, "n_pairs": results[0][1], "split": [s.t_train, s.t_val, s.t_test],
               "on": opts["on"], "config_sha256": config_hash(opts), "auc": {}}
    for sc in scorers:
        vals = [r[0][sc.name].auc for r in results]
        summary["auc"][sc.name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                                   "per_seed": vals}
        roc = results[0][0][sc.name]
        with open(out / f"roc_{sc.name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for th, f, t in zip(roc.thresholds.tolist(), roc.fpr.tolist(), roc.tpr.tolist()):
                w.writerow([repr(th), repr(f), repr(t)])
    _dump_json(out / "auc.json", summary)
    for name, r in summary["auc"].items():
        print(f"{name}: {r['mean']:.4f} +/- {r['std']:.4f}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "burstiness": cmd_burstiness,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    from graphsurv.simulation import BoundViolation
    from graphsurv.training import TrainingDiverged

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except FileNotFoundError as exc:
        msg = str(exc) if str(exc).startswith("file not found") else f"file not found: {exc.filename or exc}"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except TrainingDiverged as exc:
        last = exc.last_finite
        print(f"error: training diverged: {exc}; last finite loss: "
              f"{'none' if last is None or not math.isfinite(last) else repr(last)}", file=sys.stderr)
        return EXIT_TRAINING
    except SplitError as exc:
        print(f"error: evaluation split: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except BoundViolation as exc:
        print(f"error: simulation: {exc}", file=sys.stderr)
        return 1
    except (IngestError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
