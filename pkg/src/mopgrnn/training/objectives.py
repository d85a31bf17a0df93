"""Data-fit and energy objectives, the simulation error, and default-value scheduling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from ..datagen import Dataset, Sample
from ..dynamics import OdeSystemSpec
from ..errors import ConfigurationError, DivergenceError, InvalidInputError
from ..hybrid import predict_derivs_teacher_forced, rollout_sample

OBJECTIVES = ("mae", "energy")


def mae_loss(preds, targets):
    """Mean absolute error and its subgradient (zero at exact ties)."""
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if preds.shape != targets.shape:
        raise InvalidInputError(f"prediction shape {preds.shape} != target shape {targets.shape}")
    if preds.size == 0:
        raise InvalidInputError("empty prediction sequence")
    resid = preds - targets
    return float(np.mean(np.abs(resid))), np.sign(resid) / resid.size


def riemann_weights(n: int, dt: float, start: int = 0, stop: int | None = None, total: int | None = None):
    """Left-Riemann weights of sample indices ``start..stop-1`` of an ``total``-point series.

    Every sample carries weight ``dt`` except the final one of the series,
    which closes the last interval and carries none.
    """
    total = n if total is None else total
    stop = total if stop is None else stop
    w = np.full(stop - start, dt)
    if stop == total:
        w[-1] = 0.0
    return w


def energy_difference(spec: OdeSystemSpec, sample: Sample, preds, start: int = 0, stop: int | None = None):
    """dE_model - dE_reference along the reference states of ``sample``."""
    tr = sample.traj
    sl = slice(start, stop)
    de_model = spec.energy_residual(tr.states[sl], preds, tr.inputs[sl])
    de_ref = spec.energy_residual(tr.states[sl], tr.derivs[sl], tr.inputs[sl])
    return de_model - de_ref


def energy_window_loss(spec: OdeSystemSpec, sample: Sample, preds, start: int = 0, stop: int | None = None):
    """Energy objective of one (window of a) sample and its gradient w.r.t. ``preds``.

    The model residual depends on the prediction only through the
    acceleration, so the gradient is ``inertia * phi_dot_ref`` per step in
    the acceleration column and zero elsewhere.
    """
    tr = sample.traj
    stop = tr.grid.n if stop is None else stop
    preds = np.asarray(preds, dtype=float)
    diff = energy_difference(spec, sample, preds, start, stop)
    w = riemann_weights(tr.grid.n, tr.grid.dt, start, stop, tr.grid.n)
    count = stop - start
    loss = float(np.sum(np.abs(diff) * w) / count)
    grad = np.zeros_like(preds)
    grad[:, 1] = np.sign(diff) * w * spec.inertia * tr.states[start:stop, 1] / count
    return loss, grad


def energy_loss(m, ds: Dataset, spec: OdeSystemSpec | None = None):
    """Dataset energy objective under teacher forcing.

    Returns the scalar loss and, per sample, the gradient with respect to
    that sample's predicted derivatives.
    """
    spec = spec if spec is not None else m.phy
    if spec is None:
        raise ConfigurationError("energy loss needs the physics model parameters")
    if len(ds) == 0:
        raise InvalidInputError("energy loss of an empty dataset")
    total, grads = 0.0, []
    N = len(ds)
    for s in ds:
        preds = predict_derivs_teacher_forced(m, s)
        loss, g = energy_window_loss(spec, s, preds)
        total += loss
        grads.append(g / N)
    return total / N, grads


def sim_error_sample(targets, preds, dt: float, lam: float) -> float:
    """Discounted L1 error area of one derivative trajectory, divided by its length."""
    targets = np.asarray(targets, dtype=float)
    preds = np.asarray(preds, dtype=float)
    n = targets.shape[0]
    elapsed = dt * np.arange(n)
    err = np.sum(np.abs(targets - preds), axis=1) / (1.0 + lam * elapsed)
    return float(np.sum(err * riemann_weights(n, dt)) / n)


def evaluate_sim_error(m, ds: Dataset, lam: float = 0.5, *, return_per_sample: bool = False):
    """Mean free-run simulation error over a dataset.

    A rollout that diverges counts as an infinite error and emits a warning.
    """
    if lam < 0:
        raise InvalidInputError("discount lambda must be >= 0")
    per_sample = []
    for s in ds:
        try:
            traj = rollout_sample(m, s)
        except DivergenceError as err:
            warnings.warn(f"rollout of sample {s.id!r} diverged: {err}", RuntimeWarning, stacklevel=2)
            per_sample.append(np.inf)
            continue
        per_sample.append(sim_error_sample(s.traj.derivs, traj.derivs, s.traj.grid.dt, lam))
    mean = float(np.mean(per_sample)) if per_sample else float("nan")
    return (mean, per_sample) if return_per_sample else mean


@dataclass(frozen=True)
class DefaultValues:
    """Per-objective normalization boundaries and their contraction schedule."""

    c: tuple
    rho: float = 0.95
    eps: float = 1e-8

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        if not c or any(not np.isfinite(v) or v <= 0 for v in c):
            raise InvalidInputError(f"default values must be positive, got {c}")
        if not 0 < self.rho < 1 or self.eps <= 0:
            raise InvalidInputError("need 0 < rho < 1 and eps > 0")
        object.__setattr__(self, "c", c)

    @classmethod
    def from_losses(cls, losses, rho: float = 0.95, eps: float = 1e-8) -> "DefaultValues":
        return cls(tuple(max(float(v), eps) for v in losses), rho, eps)


def _check_losses(losses, size):
    losses = np.asarray(losses, dtype=float)
    if losses.shape != (size,):
        raise InvalidInputError(f"expected {size} losses, got shape {losses.shape}")
    if not np.all(np.isfinite(losses)) or np.any(losses < 0):
        raise InvalidInputError(f"losses must be finite and non-negative, got {losses}")
    return losses


def multi_objective_combine(losses, defaults: DefaultValues):
    """Largest normalized objective and its (0-based) index; ties go to the first."""
    c = np.asarray(defaults.c)
    ratios = _check_losses(losses, c.size) / c
    active = int(np.argmax(ratios))
    return float(ratios[active]), active


def update_defaults(defaults: DefaultValues, losses) -> DefaultValues:
    """Contract each boundary toward the achieved loss, never upward, never below eps."""
    c = np.asarray(defaults.c)
    losses = _check_losses(losses, c.size)
    new = np.maximum(defaults.eps, np.minimum(c, np.maximum(losses, defaults.rho * c)))
    return replace(defaults, c=tuple(new.tolist()))
