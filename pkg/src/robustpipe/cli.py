"""Command-line entry point: ``robustpipe <command> ...``.

Exit codes: 0 success, 1 runtime failure (including a diverged training
run), 2 usage or configuration error. Every command writes the same bytes
for the same flags and seed; wall-clock times are only printed.
"""

import argparse
import csv
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import data, hpo, metrics, pipeline, shapley, verify
from .pipeline import PRESETS, RobustSpec

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SPEC_FLAGS = (
    ("enrich_mode", str),
    ("sigma", float),
    ("vrm_replicas", int),
    ("alpha_mix", float),
    ("label_smoothing", float),
    ("input_stance", str),
    ("rho", float),
    ("norm", str),
    ("pgd_steps", int),
    ("pgd_step_size", float),
    ("label_stance", str),
    ("alpha", float),
    ("agg_stance", str),
    ("tau", float),
    ("lr", float),
)
DEFAULT_TRAIN = {"epochs": 30, "batch_size": 64, "hidden": [16]}
DEFAULT_SELECTION = {"metric": "cvar10", "split": "val_ood"}


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


# -- configuration ------------------------------------------------------------------


def config_schema():
    text = resources.files("robustpipe").joinpath("run_config.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, config_schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise UsageError(f"invalid configuration at {where}: {e.message}") from None
    return cfg


def load_config(path):
    if path is None:
        return {"schema": 1}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise UsageError(f"cannot read configuration: {e}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"configuration is not valid JSON: {e}") from None
    return validate_config(cfg)


def combine_presets(names):
    """``"vrm+w_dro"`` -> merged preset fields."""
    out = {}
    for name in names.split("+"):
        if name not in PRESETS:
            raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        out.update(PRESETS[name])
    return out


def merge_flags(cfg, args):
    """Overlay command-line flags on a validated config; returns a new, re-validated dict."""
    cfg = json.loads(json.dumps(cfg))
    if getattr(args, "recover", None):
        cfg["preset"] = args.recover
    spec = cfg.setdefault("spec", {})
    for name, _ in SPEC_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            spec[name] = v
    if not spec:
        del cfg["spec"]
    tr = cfg.setdefault("train", {})
    for k in ("epochs", "batch_size"):
        if getattr(args, k, None) is not None:
            tr[k] = getattr(args, k)
    if getattr(args, "hidden", None) is not None:
        tr["hidden"] = args.hidden
    if not tr:
        del cfg["train"]
    if getattr(args, "selection", None):
        metric, _, split = args.selection.partition(":")
        cfg["selection"] = {"metric": metric, **({"split": split} if split else {})}
    if getattr(args, "data", None):
        cfg["data"] = {"path": args.data}
    for k in ("seed", "out"):
        if getattr(args, k, None) is not None:
            cfg[k] = getattr(args, k)
    if getattr(args, "no_plots", False):
        cfg["plots"] = False
    return validate_config(cfg)


def resolve_spec(cfg):
    fields_ = combine_presets(cfg["preset"]) if "preset" in cfg else {}
    fields_.update(cfg.get("spec", {}))
    try:
        return RobustSpec.from_dict(fields_)
    except ValueError as e:
        raise UsageError(f"invalid pipeline settings: {e}") from None


def train_settings(cfg):
    tr = {**DEFAULT_TRAIN, **cfg.get("train", {})}
    return hpo.TrainSettings(tr["epochs"], tr["batch_size"], tuple(tr["hidden"]))


def selection_of(cfg):
    sel = {**DEFAULT_SELECTION, **cfg.get("selection", {})}
    return sel["metric"], sel["split"]


def sidecar_path(csv_path):
    p = Path(csv_path)
    return p.with_name(p.stem + ".columns.json")


def load_dataset(cfg):
    spec = cfg.get("data")
    if spec is None:
        raise UsageError("no dataset given (use --data or a 'data' section)")
    if "path" in spec:
        path = spec["path"]
        if not Path(path).is_file():
            raise UsageError(f"dataset {path} does not exist")
        cols = spec.get("columns")
        if cols is None:
            side = sidecar_path(path)
            if side.exists():
                cols = json.loads(side.read_text(encoding="utf-8"))
            else:
                cols = _infer_columns(path)
        try:
            return data.load_csv(path, cols)
        except OSError as e:
            raise UsageError(f"cannot read dataset: {e}") from None
        except ValueError as e:
            raise UsageError(f"bad dataset {path}: {e}") from None
    params = dict(spec.get("params", {}))
    try:
        ds = GENERATORS[spec["generator"]](**params)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad generator parameters: {e}") from None
    if spec.get("label_noise"):
        ds = data.inject_label_noise(ds, spec["label_noise"], spec.get("label_noise_seed", 0))
    return ds


def _infer_columns(path):
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    if "y" not in header:
        raise UsageError(f"{path}: no 'y' column and no column description")
    feats = [c for c in header if c not in ("y", "split")]
    return {"features": feats, "target": "y", "split": "split" if "split" in header else None}


def _moons(n=200, noise_sd=0.1, gap=None, shift=None, seed=0, n_eval=None):
    return data.gen_two_moons(n, noise_sd, tuple(gap) if gap else None, tuple(shift) if shift else None, seed, n_eval)


def _prefs(n_pairs=200, embed_dim=4, true_utility=None, annotator_noise=1.0, seed=0, fractions=(0.6, 0.1, 0.1, 0.1, 0.1)):
    u = np.ones(embed_dim) if true_utility is None else np.asarray(true_utility, dtype=float)
    return data.split(data.gen_preferences(n_pairs, embed_dim, u, annotator_noise, seed), list(fractions), seed)


GENERATORS = {"two-moons": _moons, "blobs": data.gen_blobs, "preferences": _prefs}


def out_dir(cfg, default):
    d = Path(cfg.get("out", default))
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_reports_csv(reports, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(metrics.REPORT_FIELDS)
        for tag in data.SPLITS:
            if tag in reports:
                w.writerow(reports[tag].csv_row())


# -- argument parsing helpers ---------------------------------------------------------


def parse_gap(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"gap must look like LOW:HIGH in degrees, got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"gap start must be below its end, got {text!r}")
    return lo, hi


def parse_shift(text):
    """``dx,ROTdeg`` or ``dx,dy,ROTdeg`` -> (dx, dy, rotation in degrees)."""
    parts = [p.strip() for p in text.split(",")]
    try:
        if len(parts) == 2 and parts[1].endswith("deg"):
            return float(parts[0]), 0.0, float(parts[1][:-3])
        if len(parts) == 3:
            return float(parts[0]), float(parts[1]), float(parts[2].removesuffix("deg"))
        if len(parts) == 2:
            return float(parts[0]), float(parts[1]), 0.0
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"shift must look like DX,ROTdeg or DX,DY,ROTdeg, got {text!r}")


def parse_hidden(text):
    if text.strip() in ("", "none"):
        return []
    try:
        sizes = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"hidden sizes must be comma-separated integers, got {text!r}") from None
    if any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError("hidden sizes must be positive")
    return sizes


def parse_floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def parse_assignments(text):
    out = {}
    for item in text.split(","):
        k, sep, v = item.partition("=")
        try:
            out[k.strip()] = float(v)
        except ValueError:
            sep = ""
        if not sep:
            raise argparse.ArgumentTypeError(f"expected NAME=VALUE pairs, got {item!r}")
    return out


def _add_common(p, data_flag=True):
    p.add_argument("config", nargs="?", help="JSON run configuration (flags override its values)")
    if data_flag:
        p.add_argument("--data", help="dataset CSV (a <name>.columns.json sidecar is used when present)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", type=parse_hidden, help="comma-separated hidden widths, or 'none'")
    p.add_argument("--selection", help="METRIC[:SPLIT] driving checkpoint selection")
    p.add_argument("--no-plots", action="store_true")


def _add_spec_flags(p):
    for name, typ in SPEC_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)


def build_parser():
    ap = argparse.ArgumentParser(prog="robustpipe", description="Unified robust training pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("kind", choices=sorted(GENERATORS))
    g.add_argument("--n", type=int, default=200, help="training rows (pairs for preferences)")
    g.add_argument("--n-eval", type=int, help="rows per evaluation split")
    g.add_argument("--noise", type=float, help="feature noise sd (moons/blobs) or annotator noise (preferences)")
    g.add_argument("--gap", type=parse_gap, help="class-0 arc gap in degrees, LOW:HIGH (two-moons)")
    g.add_argument("--shift", type=parse_shift, help="OOD shift DX,ROTdeg or DX,DY,ROTdeg (two-moons)")
    g.add_argument("--separation", type=float, help="blob centre distance")
    g.add_argument("--dim", type=int, help="feature (blobs) or embedding (preferences) dimension")
    g.add_argument("--utility", type=parse_floats, help="true utility weights (preferences)")
    g.add_argument("--label-noise", type=float, default=0.0, help="training label flip rate")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output CSV path")

    t = sub.add_parser("train", help="one training run")
    _add_common(t)
    t.add_argument("--recover", help="start from a baseline preset, e.g. vrm or vrm+w_dro")
    _add_spec_flags(t)

    h = sub.add_parser("hpo", help="hyperparameter search")
    _add_common(h)
    h.add_argument("--space", choices=["joint", *sorted(PRESETS)])
    h.add_argument("--sampler", choices=["random", "tpe"])
    h.add_argument("--n-trials", type=int)
    h.add_argument("--workers", type=int)

    s = sub.add_parser("shapley", help="coalition values, Shapley values and pairwise interactions")
    _add_common(s)
    s.add_argument("--players", help="comma-separated players (default vrm,ls,kl_dro)")
    s.add_argument("--tuned-from", help="directory of hpo runs named after the players (reads best_config.json)")
    s.add_argument("--metric", choices=sorted(metrics.MAXIMIZE))
    s.add_argument("--split", choices=data.SPLITS)
    s.add_argument("--seeds", type=int)
    s.add_argument("--additive", type=parse_assignments, help="test mode: NAME=VALUE contributions instead of training")

    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("suite", choices=[*verify.SUITES, "all"])
    v.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("compare", help="train several presets over seeds and report test metrics")
    _add_common(c)
    c.add_argument("--presets", default="erm,vrm,w_dro,vrm+w_dro", help="comma-separated presets; join with + to combine")
    c.add_argument("--seeds", type=int, default=10)
    _add_spec_flags(c)
    return ap


# -- commands -------------------------------------------------------------------------


def _generate(args):
    if args.kind == "two-moons":
        return data.gen_two_moons(args.n, 0.1 if args.noise is None else args.noise, args.gap, args.shift, args.seed, args.n_eval)
    if args.kind == "blobs":
        kw = {k: v for k, v in (("separation", args.separation), ("dim", args.dim)) if v is not None}
        if args.noise is not None:
            kw["sd"] = args.noise
        return data.gen_blobs(args.n, seed=args.seed, n_eval=args.n_eval, **kw)
    dim = args.dim or (len(args.utility) if args.utility else 4)
    return _prefs(args.n, dim, args.utility, 1.0 if args.noise is None else args.noise, args.seed)


def cmd_gen_data(args):
    try:
        ds = _generate(args)
        if args.label_noise:
            ds = data.inject_label_noise(ds, args.label_noise, args.seed)
    except ValueError as e:
        raise UsageError(f"bad generator parameters: {e}") from None
    kind = args.kind
    path = Path(args.out or f"{kind}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    data.save_csv(ds, path)
    cols = {"features": list(ds.feature_names), "target": "y", "task": ds.task, "n_classes": ds.n_classes, "split": "split"}
    write_json(cols, sidecar_path(path))
    print(f"wrote {ds.n} rows to {path}")
    return EXIT_OK


def _epochs_csv(rec, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "objective", "mean_loss"])
        for i, (o, m) in enumerate(zip(rec.epoch_objective, rec.epoch_mean_loss)):
            w.writerow([i, repr(o), repr(m)])


def resolved_config(cfg, spec):
    """The config with the pipeline settings expanded, so it reruns verbatim without preset lookups."""
    out = {k: v for k, v in cfg.items() if k not in ("preset", "hpo", "shapley", "out")}
    out["spec"] = spec.to_dict()
    return out


def cmd_train(args):
    cfg = merge_flags(load_config(args.config), args)
    spec = resolve_spec(cfg)
    ds = load_dataset(cfg)
    settings = train_settings(cfg)
    selection = selection_of(cfg)
    seed = cfg.get("seed", 0)
    out = out_dir(cfg, "run")
    t0 = time.perf_counter()
    res = pipeline.train(spec, ds, settings.epochs, settings.batch_size, settings.hidden, seed, selection)
    elapsed = time.perf_counter() - t0
    used = selection[1] if selection[1] in ds.present_splits() else "train"
    value = getattr(res.reports[used], selection[0]) if res.reports else math.nan
    rec = hpo.TrialRecord(0, spec, seed, selection[0], used, value, res.reports, res.best_epoch, res.stage_flags,
                          res.diverged, res.epoch_objective, res.epoch_mean_loss, elapsed)
    with open(out / "trial.json", "w", encoding="utf-8") as fh:
        json.dump(rec.to_dict(timing=False), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_reports_csv(res.reports, out / "report.csv")
    _epochs_csv(rec, out / "epochs.csv")
    write_json(resolved_config(cfg, spec), out / "config.json")
    if cfg.get("plots", True) and ds.task == "classification" and ds.dim == 2 and not res.diverged:
        from .plotting import plot_decision_boundaries

        plot_decision_boundaries({"best checkpoint": res.best_model}, ds, out / "decision_boundary.png")
    flags = ", ".join(k for k, on in res.stage_flags.items() if on) or "none"
    print(f"active stages: {flags}")
    print(f"{selection[0]} on {used}: {value:.6g} (epoch {res.best_epoch}, {elapsed:.2f}s)")
    if res.diverged:
        print("training diverged (non-finite loss)", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_hpo(args):
    cfg = load_config(args.config)
    h = dict(cfg.get("hpo", {}))
    for k in ("space", "sampler", "n_trials", "workers"):
        if getattr(args, k, None) is not None:
            h[k] = getattr(args, k)
    cfg = merge_flags({**cfg, "hpo": h}, args)
    h = {"space": "joint", "sampler": "tpe", "n_trials": 50, "workers": 1, **cfg["hpo"]}
    space = hpo.SearchSpace.joint() if h["space"] == "joint" else hpo.SearchSpace.baseline(h["space"])
    ds = load_dataset(cfg)
    settings = train_settings(cfg)
    selection = selection_of(cfg)
    out = out_dir(cfg, "hpo")
    t0 = time.perf_counter()
    best, history = hpo.search(space, h["sampler"], h["n_trials"], ds, selection, cfg.get("seed", 0), settings, workers=h["workers"])
    hpo.save_history(history, out / "history.jsonl", timing=False)
    curve = hpo.running_best(history)
    hpo.write_running_best_csv(curve, out / "running_best.csv")
    best_cfg = resolved_config(cfg, best.spec)
    best_cfg["seed"] = best.seed
    write_json(best_cfg, out / "best_config.json")
    if cfg.get("plots", True):
        from .plotting import plot_running_best

        plot_running_best({h["space"]: curve}, out / "running_best.png", selection[0])
    print(f"{len(history)} trials in {time.perf_counter() - t0:.1f}s; best trial {best.index}: {selection[0]} {best.score():.6g}")
    return EXIT_OK


def _tuned_from_dir(root, players):
    tuned = {}
    for p in players:
        path = Path(root) / p / "best_config.json"
        if not path.exists():
            raise UsageError(f"missing tuned configuration {path}")
        tuned[p] = json.loads(path.read_text(encoding="utf-8"))["spec"]
    return tuned


def cmd_shapley(args):
    cfg = load_config(args.config)
    sh = dict(cfg.get("shapley", {}))
    if args.players:
        sh["players"] = [p.strip() for p in args.players.split(",")]
    for k in ("metric", "split", "seeds", "additive"):
        if getattr(args, k, None) is not None:
            sh[k] = getattr(args, k)
    cfg = merge_flags({**cfg, "shapley": sh}, args)
    sh = {"players": ["vrm", "ls", "kl_dro"], "metric": "accuracy", "split": "test_ood", "seeds": 5, "order": 2, **cfg["shapley"]}
    players = tuple(sh["players"])
    unknown = [p for p in players if p not in shapley.PLAYERS]
    if unknown:
        raise UsageError(f"no disabled state is defined for players {unknown}")
    tuned = dict(sh.get("tuned", {}))
    if args.tuned_from:
        tuned.update(_tuned_from_dir(args.tuned_from, players))
    for p in players:
        tuned.setdefault(p, PRESETS[p])
    base = resolve_spec(cfg)
    out = out_dir(cfg, "shapley")
    value_fn = None
    if "additive" in sh:
        contrib = sh["additive"]
        missing = [p for p in players if p not in contrib]
        if missing:
            raise UsageError(f"additive test mode needs a value for every player (missing {missing})")
        value_fn = lambda mask, _spec: sum(contrib[p] for i, p in enumerate(players) if mask >> i & 1)  # noqa: E731
        ds = None
    else:
        ds = load_dataset(cfg)
    try:
        shapley.coalition_spec(players, 2 ** len(players) - 1, tuned, base)
    except ValueError as e:
        raise UsageError(str(e)) from None
    game, specs = shapley.build_game(players, tuned, ds, sh["metric"], sh["split"], sh["seeds"], train_settings(cfg),
                                     selection_of(cfg), base, cfg.get("seed", 0), value_fn)
    shapley.write_game_csv(game, out / "coalitions.csv")
    doc = shapley.indices_document(game, min(sh["order"], game.k))
    doc["coalition_specs"] = {str(m): s.to_dict() for m, s in enumerate(specs)}
    write_json(doc, out / "indices.json")
    if cfg.get("plots", True):
        from .plotting import plot_coalitions

        mains, pairs = shapley.split_indices(game, shapley.interaction_indices(game, min(2, game.k)))
        plot_coalitions(game, out / "coalitions.png", shapley.shapley_values(game), pairs or None)
    for p in players:
        print(f"{p:>8}  shapley {doc['shapley'][p]:+.6f}")
    return EXIT_OK


def cmd_verify(args):
    checks = verify.run_suite(args.suite, args.seed)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def cmd_compare(args):
    cfg = merge_flags(load_config(args.config), args)
    ds = load_dataset(cfg)
    settings = train_settings(cfg)
    selection = selection_of(cfg)
    seed = cfg.get("seed", 0)
    out = out_dir(cfg, "compare")
    names = [n.strip() for n in args.presets.split(",") if n.strip()]
    rows, boundary = [], {}
    for name in names:
        fields_ = {**combine_presets(name), **cfg.get("spec", {})}
        try:
            spec = RobustSpec.from_dict(fields_)
        except ValueError as e:
            raise UsageError(f"{name}: {e}") from None
        for s in range(args.seeds):
            res = pipeline.train(spec, ds, settings.epochs, settings.batch_size, settings.hidden, seed + s, selection)
            for tag, r in sorted(res.reports.items()):
                rows.append([name, seed + s, tag, repr(r.accuracy), repr(r.brier), repr(r.cvar10)])
            if s == 0:
                boundary[name] = res.best_model
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["preset", "seed", "split", "accuracy", "brier", "cvar10"])
        w.writerows(rows)
    summary = {}
    for name in names:
        acc = [float(r[3]) for r in rows if r[0] == name and r[2] == "test_ood"]
        summary[name] = float(np.mean(acc)) if acc else None
        if acc:
            print(f"{name:>12}  mean test_ood accuracy {summary[name]:.4f} over {len(acc)} seeds")
    write_json({"mean_test_ood_accuracy": summary, "seeds": args.seeds}, out / "summary.json")
    if cfg.get("plots", True) and ds.task == "classification" and ds.dim == 2:
        from .plotting import plot_decision_boundaries

        plot_decision_boundaries(boundary, ds, out / "decision_boundaries.png")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "hpo": cmd_hpo,
    "shapley": cmd_shapley,
    "verify": cmd_verify,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"robustpipe: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FloatingPointError, OSError, np.linalg.LinAlgError) as e:
        print(f"robustpipe: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
