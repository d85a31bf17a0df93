"""Model zoo: physics baseline, plain RNN and physics-guided RNNs.

All learned models predict state derivatives. During training they see the
reference states (teacher forcing); for evaluation they are rolled out in
closed loop with explicit Euler steps, and the physics-guided kinds then
receive the physics model evaluated at their own predicted state.
"""
from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass

import numpy as np

from .datagen import Dataset, Sample
from .dynamics import ExcitationSignal, OdeSystemSpec, TimeGrid, Trajectory, excitation_eval
from .errors import ConfigurationError, DivergenceError, InvalidInputError, SchemaError
from ._jit import njit
from .dynamics import GOLF_GEAR_RATIO, GolfParams
from .rnn import GruParams, init_params, rnn_forward

MODEL_VERSION = 1


class ModelKind(str, enum.Enum):
    PHY = "phy"
    RNN = "rnn"
    PGRNN = "pgrnn"
    MOPGRNN = "mopgrnn"

    @property
    def learned(self) -> bool:
        return self is not ModelKind.PHY

    @property
    def physics_channel(self) -> bool:
        return self in (ModelKind.PGRNN, ModelKind.MOPGRNN)


@dataclass
class Normalization:
    """Affine input scaling and per-channel output scale.

    Network inputs are ``(raw - in_mean) / in_std``; predicted derivatives
    are ``out_scale * readout``. The output map has no offset so that a
    zero readout still means zero derivative.
    """

    in_mean: np.ndarray
    in_std: np.ndarray
    out_scale: np.ndarray

    @classmethod
    def identity(cls, input_dim: int, out_dim: int) -> "Normalization":
        return cls(np.zeros(input_dim), np.ones(input_dim), np.ones(out_dim))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("in_mean", "in_std", "out_scale")}

    @classmethod
    def from_dict(cls, d) -> "Normalization":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("in_mean", "in_std", "out_scale")))


@dataclass
class Model:
    kind: ModelKind
    phy: OdeSystemSpec | None = None
    params: GruParams | None = None
    norm: Normalization | None = None
    # elapsed time is divided by this before entering the network
    time_scale: float = 1.0
    state_dim: int = 2

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        if (self.kind.physics_channel or self.kind is ModelKind.PHY) and self.phy is None:
            raise ConfigurationError(f"model kind {self.kind.value} needs a physics model")
        if self.kind.learned:
            if self.params is None:
                raise ConfigurationError(f"model kind {self.kind.value} needs network parameters")
            if self.params.input_dim != self.input_dim:
                raise ConfigurationError(
                    f"{self.kind.value} expects input_dim {self.input_dim}, params have {self.params.input_dim}")
            if self.norm is None:
                self.norm = Normalization.identity(self.input_dim, self.state_dim)

    @property
    def input_layout(self) -> list[str]:
        names = [f"x{i}" for i in range(self.state_dim)] + ["u", "t"]
        if self.kind.physics_channel:
            names += [f"phys_dx{i}" for i in range(self.state_dim)]
        return names

    @property
    def input_dim(self) -> int:
        return len(self.input_layout)

    def with_params(self, params: GruParams) -> "Model":
        return Model(self.kind, self.phy, params, self.norm, self.time_scale, self.state_dim)


def raw_inputs(kind: ModelKind, states, inputs, elapsed, time_scale, phys=None) -> np.ndarray:
    cols = [np.asarray(states, dtype=float), np.asarray(inputs, dtype=float)[:, None],
            (np.asarray(elapsed, dtype=float) / time_scale)[:, None]]
    if ModelKind(kind).physics_channel:
        if phys is None:
            raise ConfigurationError("physics-guided model needs the physics derivative channel")
        cols.append(np.asarray(phys, dtype=float))
    return np.hstack(cols)


def _sample_raw_inputs(m: Model, sample: Sample) -> np.ndarray:
    tr = sample.traj
    if m.kind.physics_channel and sample.phys_derivs is None:
        raise ConfigurationError(f"sample {sample.id!r} has no physics channel attached")
    elapsed = tr.times - tr.grid.t0
    return raw_inputs(m.kind, tr.states, tr.inputs, elapsed, m.time_scale, sample.phys_derivs)


def network_inputs(m: Model, sample: Sample) -> np.ndarray:
    """Normalized teacher-forced network inputs for one sample."""
    return (_sample_raw_inputs(m, sample) - m.norm.in_mean) / m.norm.in_std


def fit_normalization(kind, train_ds: Dataset, time_scale: float) -> Normalization:
    """Zero-mean/unit-variance inputs and RMS output scale from a training split."""
    kind = ModelKind(kind)
    raws, targets = [], []
    for s in train_ds:
        if kind.physics_channel and s.phys_derivs is None:
            raise ConfigurationError(f"sample {s.id!r} has no physics channel attached")
        tr = s.traj
        raws.append(raw_inputs(kind, tr.states, tr.inputs, tr.times - tr.grid.t0, time_scale, s.phys_derivs))
        targets.append(tr.derivs)
    if not raws:
        raise InvalidInputError("cannot fit a normalization on an empty dataset")
    raw = np.vstack(raws)
    target = np.vstack(targets)
    std = raw.std(axis=0)
    std[std < 1e-12] = 1.0
    scale = np.sqrt(np.mean(target ** 2, axis=0))
    scale[scale < 1e-12] = 1.0
    return Normalization(raw.mean(axis=0), std, scale)


def build_model(kind, phy: OdeSystemSpec | None, train_ds: Dataset | None = None, *,
                hidden_size: int = 16, seed: int = 0) -> Model:
    """Fresh model with initialized weights and normalization fit on ``train_ds``."""
    kind = ModelKind(kind)
    if not kind.learned:
        return Model(kind, phy)
    state_dim = 2 if train_ds is None or train_ds.state_dim is None else train_ds.state_dim
    if train_ds is not None and len(train_ds):
        time_scale = max(s.traj.grid.duration for s in train_ds)
    else:
        time_scale = 1.0
    layout_dim = state_dim + 2 + (state_dim if kind.physics_channel else 0)
    params = init_params(seed, layout_dim, hidden_size, state_dim)
    norm = fit_normalization(kind, train_ds, time_scale) if train_ds is not None and len(train_ds) else None
    return Model(kind, phy, params, norm, time_scale, state_dim)


def predict_derivs_teacher_forced(m: Model, sample: Sample, return_cache: bool = False):
    """Per-step derivative predictions with the reference states as input."""
    tr = sample.traj
    if not m.kind.learned:
        pred = m.phy.dynamics(tr.states, tr.inputs, tr.times)
        return (pred, None) if return_cache else pred
    S = network_inputs(m, sample)
    out, _, cache = rnn_forward(m.params, S)
    pred = out * m.norm.out_scale
    return (pred, cache) if return_cache else pred


_NO_PHYSICS, _PENDULUM, _GOLF = 0, 1, 2


def _physics_code(m: "Model"):
    if not m.kind.physics_channel:
        return _NO_PHYSICS, np.zeros(1)
    p = m.phy.params
    if isinstance(p, GolfParams):
        return _GOLF, np.array([p.m, p.a, p.J, p.d, p.r, p.mu, p.g, p.gamma, GOLF_GEAR_RATIO])
    return _PENDULUM, np.array([p.m, p.l, p.d, p.g])


@njit(cache=True)
def _physics_acc(code, prm, phi, omega, u):
    if code == 1:
        m, l, d, g = prm[0], prm[1], prm[2], prm[3]
        return (-m * g * l * np.sin(phi) - d * omega + u) / (m * l ** 2)
    m, a, J, d, r, mu, g, gamma, gear = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6], prm[7], prm[8]
    fric = r * mu * np.tanh(gamma * omega) * abs(m * omega ** 2 * a + m * g * np.cos(phi))
    return (-m * g * a * np.sin(phi) - d * omega - fric + gear * u) / J


@njit(cache=True)
def _rollout_loop(x0, inputs, tfeat, dt, code, prm, in_mean, inv_std, out_scale,
                  Wz, Wr, Wh, Rz, Rr, Rh, bz, br, bh, Wout, bout, states, derivs):
    """Fill ``states``/``derivs`` in place; return the first non-finite state index or -1."""
    n, sd = states.shape
    hs, din = Wz.shape
    h = np.zeros(hs)
    hn = np.empty(hs)
    s = np.empty(din)
    for j in range(sd):
        states[0, j] = x0[j]
    for k in range(n):
        for j in range(sd):
            if not np.isfinite(states[k, j]):
                return k
            s[j] = states[k, j]
        s[sd] = inputs[k]
        s[sd + 1] = tfeat[k]
        if code != 0:
            s[sd + 2] = states[k, 1]
            s[sd + 3] = _physics_acc(code, prm, states[k, 0], states[k, 1], inputs[k])
        for i in range(din):
            s[i] = (s[i] - in_mean[i]) * inv_std[i]
        for i in range(hs):
            az, ar, ah = bz[i], br[i], bh[i]
            for j in range(din):
                az += Wz[i, j] * s[j]
                ar += Wr[i, j] * s[j]
                ah += Wh[i, j] * s[j]
            rz, rr, rh = 0.0, 0.0, 0.0
            for j in range(hs):
                rz += Rz[i, j] * h[j]
                rr += Rr[i, j] * h[j]
                rh += Rh[i, j] * h[j]
            z = 1.0 / (1.0 + np.exp(-(az + rz)))
            r = 1.0 / (1.0 + np.exp(-(ar + rr)))
            hn[i] = (1.0 - z) * h[i] + z * np.tanh(ah + r * rh)
        for i in range(hs):
            h[i] = hn[i]
        for o in range(sd):
            acc = bout[o]
            for j in range(hs):
                acc += Wout[o, j] * h[j]
            derivs[k, o] = acc * out_scale[o]
            if k + 1 < n:
                states[k + 1, o] = states[k, o] + dt * derivs[k, o]
    return -1


def rollout_inputs(m: Model, x0, inputs, grid: TimeGrid) -> Trajectory:
    """Closed-loop Euler simulation driven by a sampled input sequence."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (m.state_dim,):
        raise InvalidInputError(f"x0 must have shape ({m.state_dim},)")
    inputs = np.ascontiguousarray(inputs, dtype=float)
    if inputs.shape != (grid.n,):
        raise InvalidInputError("inputs must be sampled on the rollout grid")
    times = grid.times
    n, dt = grid.n, grid.dt
    states = np.empty((n, m.state_dim))
    derivs = np.empty((n, m.state_dim))
    states[0] = x0
    if m.kind.learned:
        p, norm = m.params, m.norm
        code, prm = _physics_code(m)
        tfeat = (times - grid.t0) / m.time_scale
        with np.errstate(over="ignore", invalid="ignore"):
            bad = _rollout_loop(x0, inputs, tfeat, dt, code, prm, norm.in_mean, 1.0 / norm.in_std,
                                norm.out_scale, p.Wz, p.Wr, p.Wh, p.Rz, p.Rr, p.Rh, p.bz, p.br, p.bh,
                                p.Wout, p.bout, states, derivs)
        if bad >= 0:
            raise DivergenceError(f"rollout diverged at step {bad}", step=bad, t=times[bad])
    else:
        for k in range(n):
            x = states[k]
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"rollout diverged at step {k}", step=k, t=times[k])
            derivs[k] = m.phy.dynamics(x, inputs[k], times[k])
            if k + 1 < n:
                states[k + 1] = x + dt * derivs[k]
    if not np.all(np.isfinite(derivs)):
        bad = int(np.argmax(~np.all(np.isfinite(derivs), axis=1)))
        raise DivergenceError(f"rollout diverged at step {bad}", step=bad, t=times[bad])
    return Trajectory(grid, states, derivs, inputs)


def rollout(m: Model, x0, excitation: ExcitationSignal, grid: TimeGrid) -> Trajectory:
    inputs = np.asarray(excitation_eval(excitation, grid.times), dtype=float) * np.ones(grid.n)
    return rollout_inputs(m, x0, inputs, grid)


def rollout_sample(m: Model, sample: Sample) -> Trajectory:
    """Free-run from the sample's initial state under its recorded inputs."""
    tr = sample.traj
    return rollout_inputs(m, tr.states[0], tr.inputs, tr.grid)


def constraint_violation_trace(m: Model, rollout_traj: Trajectory, reference: Sample,
                               spec: OdeSystemSpec | None = None) -> np.ndarray:
    """Per-step |dE_model - dE_reference|, both under the same energy parameters.

    ``spec`` defaults to the model's physics parameters.
    """
    spec = spec if spec is not None else m.phy
    if spec is None:
        raise ConfigurationError("no energy parameters available for the constraint trace")
    ref = reference.traj
    if ref.grid.n != rollout_traj.grid.n or not np.isclose(ref.grid.dt, rollout_traj.grid.dt):
        raise InvalidInputError("rollout and reference are on different grids")
    de_model = spec.energy_residual(rollout_traj.states, rollout_traj.derivs, rollout_traj.inputs)
    de_ref = spec.energy_residual(ref.states, ref.derivs, ref.inputs)
    return np.abs(de_model - de_ref)


def model_to_dict(m: Model, meta: dict | None = None) -> dict:
    d = {
        "version": MODEL_VERSION,
        "kind": m.kind.value,
        "phy": m.phy.to_dict() if m.phy is not None else None,
        "input_layout": m.input_layout,
        "state_dim": m.state_dim,
        "time_scale": m.time_scale,
        "normalization": m.norm.to_dict() if m.norm is not None else None,
        "params": m.params.to_dict() if m.params is not None else None,
    }
    if meta is not None:
        d["meta"] = meta
    return d


def model_from_dict(d: dict) -> Model:
    if d.get("version") != MODEL_VERSION:
        raise SchemaError(f"unsupported model checkpoint version {d.get('version')!r}")
    try:
        phy = OdeSystemSpec.from_dict(d["phy"]) if d["phy"] is not None else None
        params = GruParams.from_dict(d["params"]) if d["params"] is not None else None
        norm = Normalization.from_dict(d["normalization"]) if d["normalization"] is not None else None
        m = Model(ModelKind(d["kind"]), phy, params, norm, d["time_scale"], d["state_dim"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"malformed model checkpoint: {exc!r}") from None
    if m.kind.learned and m.input_layout != d["input_layout"]:
        raise SchemaError("checkpoint input layout does not match its kind")
    return m


def save_model(m: Model, path, meta: dict | None = None) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(model_to_dict(m, meta), fh)


def load_model(path) -> Model:
    try:
        with open(path) as fh:
            return model_from_dict(json.load(fh))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
