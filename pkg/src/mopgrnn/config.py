"""Experiment configuration files.

An experiment is described by one JSON document. Every field has a
default except the system choice and the per-split excitation lists;
:func:`load_config` fills the defaults in and validates the result, so
the resolved dictionary can be embedded verbatim into output metadata.
"""
from __future__ import annotations

import copy
import itertools
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import Dataset, attach_physics_channel, generate_dataset, sample_excitations
from .dynamics import (GOLF_PHYSICS, PENDULUM_PHYSICS, PENDULUM_TRUE, ExcitationSignal, GolfParams,
                       OdeSystemSpec, PendulumParams, TimeGrid)
from .errors import ConfigurationError, MopgrnnError
from .hybrid import ModelKind
from .training import TrainConfig

OUTPUT_ROOT_ENV = "MOPGRNN_OUTPUT_ROOT"
SPLITS = ("train", "val", "test")

_DEFAULT_PARAMS = {
    "pendulum": (PENDULUM_TRUE, PENDULUM_PHYSICS),
    "golf": (GOLF_PHYSICS, GOLF_PHYSICS),
}
_PARAM_TYPES = {"pendulum": PendulumParams, "golf": GolfParams}

_TOP_LEVEL = {"name", "system", "truth", "physics", "grid", "data", "train_kinds", "kinds", "training",
              "ensemble", "counts", "trajectory_sample", "workers", "output_dir"}
_DATA_KEYS = {"seed", "measured", "noise_std", "angle_range", *SPLITS}


def _fail(field: str, msg: str):
    raise ConfigurationError(f"config field {field!r}: {msg}")


def _params_dict(p) -> dict:
    return {k: v for k, v in p.__dict__.items()}


def _resolve_params(system, given, default, field):
    if given is None:
        return _params_dict(default)
    if not isinstance(given, dict):
        _fail(field, "expected an object of parameter values")
    try:
        return _params_dict(_PARAM_TYPES[system](**given))
    except TypeError as exc:
        _fail(field, str(exc))
    except MopgrnnError as exc:
        _fail(field, str(exc))


def _interleave(groups):
    """Round-robin merge so that any prefix mixes the configured excitation entries."""
    return [x for batch in itertools.zip_longest(*groups) for x in batch if x is not None]


def resolve_config(raw: dict) -> dict:
    """Validate ``raw`` and return a copy with every default filled in."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = set(raw) - _TOP_LEVEL
    if unknown:
        _fail(sorted(unknown)[0], "unknown field")
    cfg = copy.deepcopy(raw)

    system = cfg.get("system")
    if system not in _DEFAULT_PARAMS:
        _fail("system", f"must be 'pendulum' or 'golf', got {system!r}")
    cfg.setdefault("name", system)
    true_default, phy_default = _DEFAULT_PARAMS[system]
    cfg["truth"] = _resolve_params(system, cfg.get("truth"), true_default, "truth")
    cfg["physics"] = _resolve_params(system, cfg.get("physics"), phy_default, "physics")

    grid = cfg.setdefault("grid", {})
    grid.setdefault("duration", 5.0)
    grid.setdefault("dt", 0.01)
    if set(grid) != {"duration", "dt"}:
        _fail("grid", "expects exactly 'duration' and 'dt'")
    try:
        TimeGrid.from_duration(grid["duration"], grid["dt"])
    except (MopgrnnError, TypeError) as exc:
        _fail("grid", str(exc))

    data = cfg.get("data")
    if not isinstance(data, dict):
        _fail("data", "missing or not an object")
    unknown = set(data) - _DATA_KEYS
    if unknown:
        _fail(f"data.{sorted(unknown)[0]}", "unknown field")
    data.setdefault("seed", 0)
    data.setdefault("measured", system == "golf")
    data.setdefault("noise_std", 0.0)
    data.setdefault("angle_range", [-np.pi / 2, np.pi / 2])
    counts_by_split = {}
    for split in SPLITS:
        entries = data.get(split)
        if not isinstance(entries, list) or not entries:
            _fail(f"data.{split}", "needs a non-empty list of excitation entries")
        kinds = []
        for i, entry in enumerate(entries):
            try:
                sigs = sample_excitations(entry, np.random.default_rng(0))
            except (MopgrnnError, TypeError, ValueError) as exc:
                _fail(f"data.{split}[{i}]", str(exc))
            kinds += [s.kind for s in sigs]
        counts_by_split[split] = kinds

    train_kinds = cfg.setdefault("train_kinds", None)
    if train_kinds is not None:
        bad = set(train_kinds) - {"sine", "step", "chirp", "zero"}
        if bad:
            _fail("train_kinds", f"unknown excitation kinds {sorted(bad)}")
    available = sum(1 for k in counts_by_split["train"] if train_kinds is None or k in train_kinds)

    kinds = cfg.setdefault("kinds", [k.value for k in ModelKind])
    for k in kinds:
        try:
            ModelKind(k)
        except ValueError:
            _fail("kinds", f"unknown model kind {k!r}")

    training = cfg.setdefault("training", {})
    if "kind" in training or "seed" in training:
        _fail("training", "'kind' and 'seed' are chosen per run, not in the training block")
    try:
        resolved = TrainConfig.from_dict(training).to_dict()
    except (MopgrnnError, TypeError) as exc:
        _fail("training", str(exc))
    del resolved["kind"], resolved["seed"]
    cfg["training"] = resolved

    ens = cfg.setdefault("ensemble", {})
    seeds = ens.setdefault("seeds", [0, 1, 2, 3])
    if set(ens) != {"seeds"} or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        _fail("ensemble", "expects {'seeds': [non-negative integers]}")

    counts = cfg.setdefault("counts", [available])
    if not counts or not all(isinstance(c, int) and c >= 1 for c in counts):
        _fail("counts", "expects a list of positive integers")
    if max(counts) > available:
        _fail("counts", f"{max(counts)} training sequences requested, only {available} configured")

    n_test = len(counts_by_split["test"])
    sample = cfg.setdefault("trajectory_sample", 0)
    if not isinstance(sample, int) or not 0 <= sample < n_test:
        _fail("trajectory_sample", f"must index one of the {n_test} test samples")
    workers = cfg.setdefault("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        _fail("workers", "must be a positive integer")
    cfg.setdefault("output_dir", os.path.join("runs", cfg["name"]))
    if not isinstance(cfg["output_dir"], str):
        _fail("output_dir", "must be a path string")
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return resolve_config(raw)


@dataclass
class Experiment:
    """A resolved configuration plus the objects derived from it."""

    config: dict

    @property
    def system(self) -> str:
        return self.config["system"]

    @property
    def truth(self) -> OdeSystemSpec:
        return OdeSystemSpec(self.system, _PARAM_TYPES[self.system](**self.config["truth"]))

    @property
    def physics(self) -> OdeSystemSpec:
        return OdeSystemSpec(self.system, _PARAM_TYPES[self.system](**self.config["physics"]))

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_duration(self.config["grid"]["duration"], self.config["grid"]["dt"])

    @property
    def output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV) or os.getcwd()
        return Path(root) / self.config["output_dir"]

    def data_path(self, split: str) -> Path:
        return self.output_dir / "data" / f"{split}.json"

    def train_config(self, kind: str, seed: int) -> TrainConfig:
        return TrainConfig(kind=kind, seed=seed, **self.config["training"])

    def excitations(self, split: str) -> list[ExcitationSignal]:
        data = self.config["data"]
        rng = np.random.default_rng([data["seed"], SPLITS.index(split)])
        return _interleave([sample_excitations(e, rng) for e in data[split]])

    def generate(self, split: str) -> Dataset:
        data = self.config["data"]
        sigs = self.excitations(split)
        ds = generate_dataset(self.truth, sigs, len(sigs), self.grid,
                              seed=data["seed"] * 100 + SPLITS.index(split) + 1, zipped=True,
                              measured=data["measured"], noise_std=data["noise_std"], split=split,
                              angle_range=tuple(data["angle_range"]))
        return attach_physics_channel(ds, self.physics)

    def training_subset(self, train_ds: Dataset, count: int) -> Dataset:
        return train_ds.subset(count, self.config["train_kinds"])
