"""Command-line front end: ``mopgrnn {generate,train,sweep,report,rollout}``.

Every number comes from the JSON config; flags only pick the config, the
run (kind, training-sequence count, seed) and verbosity. Output lands under
the config's ``output_dir``, resolved against ``$MOPGRNN_OUTPUT_ROOT`` (or
the working directory)::

    data/{train,val,test}.json
    models/<kind>/n<count>/seed<seed>/{model.json,history.csv}
    results.csv
    trajectories/<kind>_n<count>.csv
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import SPLITS, Experiment, load_config
from .datagen import Dataset, load_dataset, save_dataset
from .errors import ConfigurationError, DivergenceError, InvalidInputError, MopgrnnError, SchemaError
from .hybrid import ModelKind, build_model, constraint_violation_trace, load_model, model_to_dict, rollout_sample
from .training import MemberResult, evaluate_sim_error, summarize, train

log = logging.getLogger("mopgrnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_PARTIAL = 0, 2, 3, 4, 5

RESULT_COLUMNS = ("kind", "count", "mean_E_sim", "std_E_sim", "min_E_sim", "max_E_sim", "mean_delta",
                  "seeds", "failed")
TRAJECTORY_COLUMNS = ("t", "phi_true", "phidot_true", "phi_model", "phidot_model", "u", "dE_S", "dE_M", "delta")


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


# --- file helpers ---------------------------------------------------------------

def _header(meta: dict) -> str:
    return "# " + json.dumps(meta, sort_keys=True) + "\n"


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _csv_text(meta: dict, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(_header(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path) -> tuple[dict, list[dict]]:
    """Metadata header and rows of a CSV written by this tool."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise SchemaError(f"{path}: missing metadata header")
        meta = json.loads(first[2:])
        return meta, list(csv.DictReader(fh))


# --- runs ----------------------------------------------------------------------

def run_dir(exp: Experiment, kind: str, count: int, seed: int) -> Path:
    return exp.output_dir / "models" / kind / f"n{count:02d}" / f"seed{seed}"


def load_splits(exp: Experiment) -> dict[str, Dataset]:
    out = {}
    for split in SPLITS:
        path = exp.data_path(split)
        if not path.exists():
            raise CliError(f"{path} not found; run `mopgrnn generate` first", EXIT_DATA)
        out[split] = load_dataset(path)
    return out


def _run_meta(exp: Experiment, kind: str, count: int, seed: int | None) -> dict:
    return {"config": exp.config, "kind": kind, "count": count, "seed": seed}


def train_run(exp: Experiment, splits, kind: str, count: int, seed: int):
    """Train one model and write its checkpoint and history. Returns the model."""
    train_ds = exp.training_subset(splits["train"], count)
    out = run_dir(exp, kind, count, seed)
    meta = _run_meta(exp, kind, count, seed)
    if kind == ModelKind.PHY.value:
        model = build_model(kind, exp.physics)
        val = evaluate_sim_error(model, splits["val"], exp.config["training"]["lam"])
        history = _csv_text({**meta, "baseline": True}, ("epoch", "loss_mae", "loss_energy", "c_mae",
                                                          "c_energy", "J", "active", "val_E_sim"),
                            [(0, math.nan, math.nan, math.nan, math.nan, math.nan, "baseline", val)])
    else:
        model = build_model(kind, exp.physics, train_ds, hidden_size=exp.config["training"]["hidden_size"],
                            seed=seed)
        model, hist = train(model, train_ds, splits["val"], exp.train_config(kind, seed))
        history = hist.to_csv(json.dumps({**meta, "initial_c": hist.initial_c}, sort_keys=True))
    _write_atomic(out / "history.csv", history)
    # the checkpoint is written last: its presence marks a completed run
    _write_atomic(out / "model.json", json.dumps(model_to_dict(model, meta)))
    return model


def _member_job(config: dict, kind: str, count: int, seed: int):
    """Train-or-load one ensemble member and score it; safe to run in a worker process."""
    exp = Experiment(config)
    splits = {s: load_dataset(exp.data_path(s)) for s in SPLITS}
    ckpt = run_dir(exp, kind, count, seed) / "model.json"
    try:
        if ckpt.exists():
            model = load_model(ckpt)
        else:
            model = train_run(exp, splits, kind, count, seed)
        err, delta = _score(exp, model, splits["test"])
        if not math.isfinite(err):
            raise DivergenceError("test rollout diverged")
        return MemberResult(seed, err), delta
    except MopgrnnError as exc:
        log.warning("%s n=%d seed=%d failed: %s", kind, count, seed, exc)
        return MemberResult(seed, math.nan, str(exc)), math.nan


def _score(exp: Experiment, model, test_ds: Dataset):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        err = evaluate_sim_error(model, test_ds, exp.config["training"]["lam"])
    sample = test_ds.samples[exp.config["trajectory_sample"]]
    try:
        delta = float(np.mean(constraint_violation_trace(model, rollout_sample(model, sample), sample,
                                                         exp.physics)))
    except DivergenceError:
        delta = math.inf
    return err, delta


def trajectory_rows(exp: Experiment, model, sample):
    traj = rollout_sample(model, sample)
    ref = sample.traj
    spec = exp.physics
    de_s = spec.energy_residual(ref.states, ref.derivs, ref.inputs)
    de_m = spec.energy_residual(traj.states, traj.derivs, traj.inputs)
    cols = (ref.times, ref.states[:, 0], ref.states[:, 1], traj.states[:, 0], traj.states[:, 1], ref.inputs,
            de_s, de_m, np.abs(de_m - de_s))
    return [tuple(float(c[k]) for c in cols) for k in range(ref.grid.n)]


def write_trajectory(exp: Experiment, model, sample, path: Path, meta: dict) -> None:
    _write_atomic(path, _csv_text({**meta, "sample": sample.id}, TRAJECTORY_COLUMNS,
                                  trajectory_rows(exp, model, sample)))


# --- subcommands -------------------------------------------------------------------

def cmd_generate(args) -> int:
    exp = Experiment(load_config(args.config))
    meta = {"config": exp.config}
    for split in SPLITS:
        ds = exp.generate(split)
        save_dataset(ds, exp.data_path(split), meta={**meta, "split": split})
        print(f"{split}: {len(ds)} samples")
    g = exp.grid
    print(f"grid: n={g.n} dt={g.dt} duration={g.duration}")
    return EXIT_OK


def _check_run_args(exp: Experiment, kind: str, count: int):
    if kind not in [k.value for k in ModelKind]:
        raise CliError(f"unknown model kind {kind!r}", EXIT_CONFIG)
    if count < 1:
        raise CliError("--count must be positive", EXIT_CONFIG)


def cmd_train(args) -> int:
    exp = Experiment(load_config(args.config))
    _check_run_args(exp, args.kind, args.count)
    splits = load_splits(exp)
    try:
        exp.training_subset(splits["train"], args.count)
    except InvalidInputError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    train_run(exp, splits, args.kind, args.count, args.seed)
    print(run_dir(exp, args.kind, args.count, args.seed))
    return EXIT_OK


def cmd_rollout(args) -> int:
    exp = Experiment(load_config(args.config))
    _check_run_args(exp, args.kind, args.count)
    splits = load_splits(exp)
    out = run_dir(exp, args.kind, args.count, args.seed)
    ckpt = out / "model.json"
    if not ckpt.exists():
        raise CliError(f"{ckpt} not found; run `mopgrnn train` first", EXIT_DATA)
    test = splits["test"]
    idx = exp.config["trajectory_sample"] if args.sample is None else args.sample
    if not 0 <= idx < len(test):
        raise CliError(f"--sample must index one of the {len(test)} test samples", EXIT_CONFIG)
    model = load_model(ckpt)
    path = out / f"rollout_test{idx}.csv"
    write_trajectory(exp, model, test.samples[idx], path, _run_meta(exp, args.kind, args.count, args.seed))
    print(path)
    return EXIT_OK


def cmd_sweep(args) -> int:
    exp = Experiment(load_config(args.config))
    cfg = exp.config
    splits = load_splits(exp)
    test = splits["test"]
    sample = test.samples[cfg["trajectory_sample"]]
    seeds = cfg["ensemble"]["seeds"]

    jobs = [(kind, count, seed) for count in cfg["counts"] for kind in cfg["kinds"] if kind != "phy"
            for seed in seeds]
    if cfg["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            done = list(pool.map(_member_job, *zip(*[(cfg, k, c, s) for k, c, s in jobs])))
    else:
        done = [_member_job(cfg, k, c, s) for k, c, s in jobs]
    by_cell = {}
    for (kind, count, _), res in zip(jobs, done):
        by_cell.setdefault((kind, count), []).append(res)

    rows, failed = [], False
    phy_row = None
    if "phy" in cfg["kinds"]:
        phy = build_model("phy", exp.physics)
        err, delta = _score(exp, phy, test)
        phy_row = (err, delta)
    for count in cfg["counts"]:
        for kind in cfg["kinds"]:
            if kind == "phy":
                err, delta = phy_row
                rows.append(("phy", count, err, 0.0, err, err, delta, "", ""))
                model = phy
            else:
                members = by_cell[(kind, count)]
                stats = summarize([m for m, _ in members])
                ok = [d for m, d in members if m.error is None]
                bad = [str(m.seed) for m, _ in members if m.error is not None]
                failed |= bool(bad)
                rows.append((kind, count, stats.mean, stats.std, stats.min, stats.max,
                             float(np.mean(ok)) if ok else math.nan, " ".join(map(str, seeds)), " ".join(bad)))
                first = next((m.seed for m, _ in members if m.error is None), None)
                if first is None:
                    continue
                model = load_model(run_dir(exp, kind, count, first) / "model.json")
            try:
                write_trajectory(exp, model, sample, exp.output_dir / "trajectories" / f"{kind}_n{count:02d}.csv",
                                 _run_meta(exp, kind, count, None if kind == "phy" else first))
            except DivergenceError as exc:
                log.warning("trajectory rollout of %s n=%d diverged: %s", kind, count, exc)
    _write_atomic(exp.output_dir / "results.csv", _csv_text({"config": cfg, "seeds": seeds}, RESULT_COLUMNS, rows))
    print(format_results(rows))
    return EXIT_PARTIAL if failed else EXIT_OK


def format_results(rows) -> str:
    lines = [f"{'kind':<8} {'count':>5} {'mean E_sim':>12} {'std':>10} {'mean delta':>12}"]
    for r in rows:
        lines.append(f"{r[0]:<8} {r[1]:>5} {r[2]:>12.5g} {r[3]:>10.3g} {r[6]:>12.5g}")
    return "\n".join(lines)


def reduction(reference: float, value: float) -> float:
    """Relative error reduction ``(reference - value) / reference`` in percent."""
    return 100.0 * (reference - value) / reference


def report_lines(rows: list[dict]) -> list[str]:
    table = {}
    for r in rows:
        try:
            table[(r["kind"], int(r["count"]))] = float(r["mean_E_sim"])
        except (KeyError, ValueError):
            raise SchemaError(f"malformed results row {r}") from None
    counts = sorted({c for _, c in table})
    lines = []
    for count in counts:
        parts = [f"n={count}:"]
        for hybrid in ("pgrnn", "mopgrnn"):
            for ref in ("rnn", "phy"):
                a, b = table.get((ref, count)), table.get((hybrid, count))
                ok = a is not None and b is not None and math.isfinite(a) and math.isfinite(b) and a > 0
                parts.append(f"{hybrid} vs {ref} " + (f"{reduction(a, b):+.1f}%" if ok else "n/a"))
        lines.append("  ".join(parts))
    return lines


def cmd_report(args) -> int:
    path = Path(args.results_dir) / "results.csv"
    if not path.exists():
        raise CliError(f"no results.csv in {args.results_dir}", EXIT_DATA)
    try:
        _, rows = read_csv(path)
    except (json.JSONDecodeError, csv.Error) as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if not rows:
        raise CliError(f"{path} has no result rows", EXIT_DATA)
    for line in report_lines(rows):
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mopgrnn", description="Physics-guided GRU surrogate experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate the train/val/test datasets")
    g.add_argument("config")
    g.set_defaults(func=cmd_generate)

    for name, func, text in (("train", cmd_train, "train one model"),
                             ("rollout", cmd_rollout, "free-run a trained model on a test sample")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config")
        s.add_argument("--kind", required=True)
        s.add_argument("--count", type=int, required=True, help="number of training sequences")
        s.add_argument("--seed", type=int, default=0)
        if name == "rollout":
            s.add_argument("--sample", type=int, default=None, help="test sample index")
        s.set_defaults(func=func)

    s = sub.add_parser("sweep", help="ensemble comparison over model kinds and training counts")
    s.add_argument("config")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summarize a finished sweep")
    r.add_argument("results_dir")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SchemaError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
