"""Excitation-response datasets, physics channels and JSON (de)serialization."""
from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (ExcitationSignal, OdeSystemSpec, TimeGrid, Trajectory,
                       numerical_differentiate, simulate)
from .errors import DivergenceError, InvalidInputError, SchemaError

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test", "pool")
DEFAULT_ANGLE_RANGE = (-np.pi / 2, np.pi / 2)


@dataclass
class Sample:
    traj: Trajectory
    phys_derivs: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        if self.phys_derivs is not None:
            self.phys_derivs = np.asarray(self.phys_derivs, dtype=float)
            if self.phys_derivs.shape != self.traj.states.shape:
                raise InvalidInputError(f"phys_derivs of sample {self.id!r} not aligned with states")

    @property
    def n(self) -> int:
        return self.traj.grid.n

    @property
    def excitation_kind(self) -> str:
        return self.id.split("-", 1)[0]


@dataclass
class Dataset:
    samples: list[Sample] = field(default_factory=list)
    split: str = "pool"
    system: str = "pendulum"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise InvalidInputError(f"unknown split {self.split!r}")
        dims = {s.traj.states.shape[1] for s in self.samples}
        if len(dims) > 1:
            raise InvalidInputError("samples disagree on the state dimension")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def state_dim(self) -> int | None:
        return self.samples[0].traj.states.shape[1] if self.samples else None

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def subset(self, n: int | None = None, kinds=None) -> "Dataset":
        """First ``n`` samples, optionally restricted to excitation kinds."""
        chosen = [s for s in self.samples if kinds is None or s.excitation_kind in kinds]
        if n is not None:
            if n > len(chosen):
                raise InvalidInputError(f"requested {n} samples, only {len(chosen)} available")
            chosen = chosen[:n]
        return replace(self, samples=chosen)


def random_initial_states(count: int, seed: int, angle_range=DEFAULT_ANGLE_RANGE) -> list[np.ndarray]:
    """Angles uniform in ``angle_range``, zero initial velocity."""
    rng = np.random.default_rng(seed)
    lo, hi = angle_range
    return [np.array([a, 0.0]) for a in rng.uniform(lo, hi, size=count)]


def _measure(traj: Trajectory, noise_std: float, rng, measured: bool) -> Trajectory:
    states = traj.states
    if noise_std > 0:
        states = states + rng.normal(0.0, noise_std, size=states.shape)
    if not measured:
        return replace(traj, states=states)
    # only the angle is observed; velocity and acceleration are reconstructed
    dt = traj.grid.dt
    phi = states[:, 0]
    omega = numerical_differentiate(phi, dt)
    acc = numerical_differentiate(omega, dt)
    return replace(traj, states=np.column_stack([phi, omega]), derivs=np.column_stack([omega, acc]))


def generate_dataset(spec: OdeSystemSpec, excitations, x0s, grid: TimeGrid, seed: int = 0, *,
                     zipped: bool = False, measured: bool = False, noise_std: float = 0.0,
                     split: str = "pool", angle_range=DEFAULT_ANGLE_RANGE) -> Dataset:
    """Simulate one sample per (excitation, initial state) pair.

    ``x0s`` may be an explicit list of states or an integer count, in which
    case initial states are drawn from ``angle_range`` using ``seed``. With
    ``measured=True`` only the angle is kept and the velocity/acceleration
    are rebuilt by numerical differentiation.
    """
    excitations = list(excitations)
    if isinstance(x0s, (int, np.integer)):
        x0s = random_initial_states(int(x0s), seed, angle_range)
    x0s = [np.asarray(x, dtype=float) for x in x0s]
    if not excitations or not x0s:
        raise InvalidInputError("need at least one excitation and one initial state")
    if zipped:
        if len(excitations) != len(x0s):
            raise InvalidInputError("zipped pairing needs equally many excitations and initial states")
        pairs = list(zip(excitations, x0s))
    else:
        pairs = list(itertools.product(excitations, x0s))

    noise_rng = np.random.default_rng([seed, 1])
    samples = []
    for i, (exc, x0) in enumerate(pairs):
        try:
            traj = simulate(spec, x0, exc, grid)
        except DivergenceError as err:
            raise DivergenceError(f"simulation of pair {i} ({exc}, x0={x0.tolist()}) diverged: {err}",
                                  t=err.t, sample=i) from None
        traj = _measure(traj, noise_std, noise_rng, measured)
        samples.append(Sample(traj, None, f"{exc.kind}-{i:03d}"))
    return Dataset(samples, split, spec.system)


def attach_physics_channel(ds: Dataset, phy: OdeSystemSpec) -> Dataset:
    """Evaluate the physics model along every reference trajectory."""
    if ds.state_dim is not None and ds.state_dim != phy.state_dim:
        raise InvalidInputError(f"physics model has state dim {phy.state_dim}, data has {ds.state_dim}")
    out = []
    for s in ds.samples:
        ch = phy.dynamics(s.traj.states, s.traj.inputs, s.traj.times)
        out.append(replace(s, phys_derivs=ch))
    return replace(ds, samples=out)


def split_dataset(ds: Dataset, counts, seed: int = 0):
    """Shuffle deterministically and cut into train/val/test datasets."""
    n_train, n_val, n_test = (int(c) for c in counts)
    if min(n_train, n_val, n_test) < 0:
        raise InvalidInputError("split counts must be non-negative")
    if n_train + n_val + n_test > len(ds):
        raise InvalidInputError(f"split {counts} needs more than the {len(ds)} available samples")
    order = np.random.default_rng(seed).permutation(len(ds))
    picked = [ds.samples[i] for i in order]
    bounds = np.cumsum([0, n_train, n_val, n_test])
    return tuple(
        replace(ds, samples=picked[bounds[j]:bounds[j + 1]], split=name)
        for j, name in enumerate(("train", "val", "test"))
    )


def _columns(arr: np.ndarray) -> list[list[float]]:
    return [col.tolist() for col in np.asarray(arr).T]


def dataset_to_dict(ds: Dataset, meta: dict | None = None) -> dict:
    dts = {s.traj.grid.dt for s in ds.samples}
    t0s = {s.traj.grid.t0 for s in ds.samples}
    if len(dts) > 1 or len(t0s) > 1:
        raise InvalidInputError("all samples of a dataset must share dt and t0")
    body = {
        "schema_version": SCHEMA_VERSION,
        "system": ds.system,
        "split": ds.split,
        "state_dim": ds.state_dim,
        "dt": dts.pop() if dts else None,
        "t0": t0s.pop() if t0s else 0.0,
        "samples": [],
    }
    for s in ds.samples:
        rec = {"id": s.id, "states": _columns(s.traj.states), "derivs": _columns(s.traj.derivs),
               "inputs": s.traj.inputs.tolist()}
        if s.phys_derivs is not None:
            rec["phys_derivs"] = _columns(s.phys_derivs)
        body["samples"].append(rec)
    if meta is not None:
        body["meta"] = meta
    return body


def dataset_from_dict(d: dict) -> Dataset:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported dataset schema version {d.get('schema_version')!r}")
    try:
        dim = d["state_dim"]
        samples = []
        for rec in d["samples"]:
            states = np.array(rec["states"], dtype=float).T
            derivs = np.array(rec["derivs"], dtype=float).T
            if states.shape[1:] != (dim,) or derivs.shape != states.shape:
                raise SchemaError(f"sample {rec['id']!r} does not match state_dim={dim}")
            phys = rec.get("phys_derivs")
            if phys is not None:
                phys = np.array(phys, dtype=float).T
                if phys.shape != states.shape:
                    raise SchemaError(f"phys_derivs of sample {rec['id']!r} misaligned")
            grid = TimeGrid(d["t0"], d["dt"], states.shape[0])
            samples.append(Sample(Trajectory(grid, states, derivs, rec["inputs"]), phys, rec["id"]))
        return Dataset(samples, d["split"], d["system"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed dataset: {exc!r}") from None


def save_dataset(ds: Dataset, path, meta: dict | None = None) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(ds, meta), fh)


def load_dataset(path) -> Dataset:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return dataset_from_dict(d)


def sample_excitations(entry: dict, rng) -> list[ExcitationSignal]:
    """Expand one excitation entry from a config into concrete signals.

    Scalar fields are used as-is; two-element lists ``[lo, hi]`` are drawn
    uniformly per signal. ``count`` (default 1) sets how many are produced.
    """
    entry = dict(entry)
    count = int(entry.pop("count", 1))
    known = set(ExcitationSignal.__dataclass_fields__)
    unknown = set(entry) - known
    if unknown:
        raise InvalidInputError(f"unknown excitation fields {sorted(unknown)}")
    out = []
    for _ in range(count):
        kw = {}
        for k, v in entry.items():
            if isinstance(v, (list, tuple)):
                if len(v) != 2:
                    raise InvalidInputError(f"range for {k!r} must be [lo, hi]")
                kw[k] = float(rng.uniform(v[0], v[1]))
            else:
                kw[k] = v
        out.append(ExcitationSignal(**kw))
    return out
