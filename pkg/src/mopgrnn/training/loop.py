"""Training loop with truncated BPTT, ensembles and hidden-size search."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..datagen import Dataset
from ..errors import DivergenceError, InvalidInputError, MopgrnnError
from ..hybrid import Model, ModelKind, build_model, network_inputs
from ..rnn import rnn_backward, rnn_forward
from .adam import AdamState, adam_step
from .objectives import (OBJECTIVES, DefaultValues, energy_window_loss, evaluate_sim_error,
                         mae_loss, multi_objective_combine, update_defaults)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "loss_mae", "loss_energy", "c_mae", "c_energy", "J", "active", "val_E_sim")


@dataclass
class TrainConfig:
    kind: str = "pgrnn"
    hidden_size: int = 16
    epochs: int = 300
    window: int = 250
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # discount of the simulation error, 1/s
    lam: float = 0.5
    rho: float = 0.95
    eps: float = 1e-8
    val_every: int = 1

    def __post_init__(self):
        ModelKind(self.kind)
        if self.epochs < 0 or self.window < 1 or self.hidden_size < 1 or self.val_every < 1:
            raise InvalidInputError(f"invalid training configuration {self}")
        if self.learning_rate <= 0 or self.lam < 0:
            raise InvalidInputError("learning rate must be positive and lambda non-negative")

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown training options {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss_mae: float
    loss_energy: float
    c_mae: float
    c_energy: float
    J: float
    active: str
    val_E_sim: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    # defaults in effect before the first epoch (mopgrnn only)
    initial_c: tuple | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header is not None:
            buf.write(f"# {header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in _record_row(r)])
        return buf.getvalue()


def _record_row(r: EpochRecord):
    return tuple(getattr(r, c) for c in HISTORY_COLUMNS)


def _windows(n: int, window: int):
    return [(a, min(a + window, n)) for a in range(0, n, window)]


class _SampleData:
    """Per-sample arrays reused every epoch."""

    def __init__(self, m: Model, sample):
        self.sample = sample
        self.S = network_inputs(m, sample)
        self.target = sample.traj.derivs
        self.target_n = sample.traj.derivs / m.norm.out_scale


def _full_losses(m: Model, data, multi: bool) -> np.ndarray:
    """Teacher-forced objectives of the whole training set with current parameters."""
    maes, energies = [], []
    for d in data:
        out, _, _ = rnn_forward(m.params, d.S)
        maes.append(mae_loss(out, d.target_n)[0])
        if multi:
            energies.append(energy_window_loss(m.phy, d.sample, out * m.norm.out_scale)[0])
    return np.array([np.mean(maes), np.mean(energies)] if multi else [np.mean(maes)])


def train(m: Model, train_ds: Dataset, val_ds: Dataset | None, cfg: TrainConfig):
    """Fit ``m`` on ``train_ds``. Returns the best-validation model and the epoch history.

    Every training sample is split into windows of ``cfg.window`` steps; the
    hidden state is carried across windows but gradients are not, and ADAM
    updates once per window. For ``mopgrnn`` the gradient of the currently
    largest normalized objective is followed and the default values contract
    once per epoch.
    """
    history = History()
    if not m.kind.learned or cfg.epochs == 0:
        return m, history
    if len(train_ds) == 0:
        raise InvalidInputError("empty training set")
    multi = m.kind is ModelKind.MOPGRNN
    data = [_SampleData(m, s) for s in train_ds]
    for d in data:
        if d.S.shape[0] < 1:
            raise InvalidInputError("empty training sequence")
    rng = np.random.default_rng(cfg.seed)
    params = m.params.copy()
    adam = AdamState.fresh(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    scale = m.norm.out_scale

    defaults = None
    if multi:
        defaults = DefaultValues.from_losses(_full_losses(m, data, True), cfg.rho, cfg.eps)
        history.initial_c = defaults.c

    best, best_err = params.copy(), math.inf
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(2 if multi else 1)
        steps = 0
        for idx in rng.permutation(len(data)):
            d = data[idx]
            h = None
            for a, b in _windows(d.S.shape[0], cfg.window):
                out, h_last, cache = rnn_forward(params, d.S[a:b], h)
                mae, g = mae_loss(out, d.target_n[a:b])
                losses = [mae]
                if multi:
                    e, g_e = energy_window_loss(m.phy, d.sample, out * scale, a, b)
                    losses.append(e)
                    _, active = multi_objective_combine(losses, defaults)
                    g = (g, g_e * scale)[active] / defaults.c[active]
                if not np.all(np.isfinite(losses)):
                    raise DivergenceError(f"non-finite loss in epoch {epoch}, sample {d.sample.id!r}",
                                          epoch=epoch, sample=d.sample.id)
                grads = rnn_backward(params, cache, g)
                try:
                    adam, params = adam_step(adam, params, grads)
                except DivergenceError:
                    raise DivergenceError(f"non-finite gradient in epoch {epoch}, sample {d.sample.id!r}",
                                          epoch=epoch, sample=d.sample.id) from None
                sums += np.asarray(losses) * (b - a)
                steps += b - a
                h = h_last
        losses = sums / steps

        if multi:
            J, active = multi_objective_combine(losses, defaults)
            rec = EpochRecord(epoch, float(losses[0]), float(losses[1]), defaults.c[0], defaults.c[1],
                              J, OBJECTIVES[active], math.nan)
            defaults = update_defaults(defaults, losses)
        else:
            rec = EpochRecord(epoch, float(losses[0]), math.nan, math.nan, math.nan,
                              float(losses[0]), OBJECTIVES[0], math.nan)

        if val_ds is not None and len(val_ds) and (epoch % cfg.val_every == 0 or epoch == cfg.epochs):
            rec.val_E_sim = evaluate_sim_error(m.with_params(params), val_ds, cfg.lam)
            if rec.val_E_sim < best_err:
                best, best_err = params.copy(), rec.val_E_sim
        history.records.append(rec)
        log.debug("epoch %d: %s", epoch, rec)

    if best_err == math.inf:
        best = params
    return m.with_params(best), history


@dataclass
class MemberResult:
    seed: int
    test_E_sim: float
    error: str | None = None
    model: Model | None = None
    history: History | None = None


@dataclass
class EnsembleStats:
    mean: float
    std: float
    min: float
    max: float
    members: list[MemberResult]

    @property
    def failed(self) -> list[MemberResult]:
        return [r for r in self.members if r.error is not None]


def summarize(members: list[MemberResult]) -> EnsembleStats:
    ok = np.array([r.test_E_sim for r in members if r.error is None], dtype=float)
    if ok.size == 0:
        return EnsembleStats(math.nan, math.nan, math.nan, math.nan, members)
    lo, hi = float(ok.min()), float(ok.max())
    if lo == hi:
        # identical members: avoid rounding noise in the mean and spread
        return EnsembleStats(lo, 0.0, lo, hi, members)
    return EnsembleStats(float(ok.mean()), float(np.std(ok, ddof=1)), lo, hi, members)


def train_member(cfg: TrainConfig, seed: int, train_ds, val_ds, phy):
    """Build and train one model whose init and shuffle derive from ``seed``."""
    member_cfg = TrainConfig(**{**cfg.to_dict(), "seed": seed})
    m = build_model(cfg.kind, phy, train_ds, hidden_size=cfg.hidden_size, seed=seed)
    return train(m, train_ds, val_ds, member_cfg)


def ensemble_run(cfg: TrainConfig, k: int, seeds, train_ds: Dataset, val_ds: Dataset,
                 test_ds: Dataset, phy=None) -> EnsembleStats:
    """Train ``k`` identically configured models and summarize their test error.

    Failed members are recorded with their error message and left out of
    the statistics.
    """
    seeds = list(seeds)
    if k != len(seeds):
        raise InvalidInputError(f"ensemble size {k} does not match {len(seeds)} seeds")
    members = []
    for seed in seeds:
        try:
            model, hist = train_member(cfg, seed, train_ds, val_ds, phy)
            err = evaluate_sim_error(model, test_ds, cfg.lam)
            if not math.isfinite(err):
                raise DivergenceError("test rollout diverged")
            members.append(MemberResult(seed, err, None, model, hist))
        except MopgrnnError as exc:
            log.warning("ensemble member with seed %s failed: %s", seed, exc)
            members.append(MemberResult(seed, math.nan, str(exc)))
    return summarize(members)


def hyperparameter_search(cfg: TrainConfig, candidates, train_ds: Dataset, val_ds: Dataset,
                          phy=None, budget: int | None = None):
    """Random search over hidden sizes by validation simulation error.

    With ``budget`` smaller than the number of candidates, a seeded random
    subset is tried (in candidate order). Ties keep the earliest candidate.
    Returns ``(best_hidden_size, table)`` with one row per tried candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise InvalidInputError("no hidden-size candidates")
    order = list(range(len(candidates)))
    if budget is not None and budget < len(candidates):
        if budget < 1:
            raise InvalidInputError("budget must be >= 1")
        order = sorted(np.random.default_rng(cfg.seed).choice(len(candidates), budget, replace=False))
    table, best, best_err = [], None, math.inf
    for i in order:
        size = int(candidates[i])
        model, _ = train_member(TrainConfig(**{**cfg.to_dict(), "hidden_size": size}), cfg.seed,
                                train_ds, val_ds, phy)
        err = evaluate_sim_error(model, val_ds, cfg.lam)
        table.append({"hidden_size": size, "val_E_sim": err})
        if err < best_err or best is None:
            best, best_err = size, err
    return best, table
