"""Single-layer GRU with a linear readout, trained by backpropagation through time.

Input projections ``W s + b`` are computed for the whole sequence at once;
only the recurrent part runs step by step. The step loops are compiled with
numba when it is importable and fall back to plain numpy otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ._jit import njit
from .errors import InvalidInputError, SchemaError

CHECKPOINT_VERSION = 1
BLOCKS = ("Wz", "Wr", "Wh", "Rz", "Rr", "Rh", "bz", "br", "bh", "Wout", "bout")


@dataclass
class GruParams:
    """All learnables of one recurrent model. Also used to hold gradients."""

    Wz: np.ndarray
    Wr: np.ndarray
    Wh: np.ndarray
    Rz: np.ndarray
    Rr: np.ndarray
    Rh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray
    Wout: np.ndarray
    bout: np.ndarray

    def __post_init__(self):
        z, d = np.shape(self.Wz)
        o = np.shape(self.Wout)[0]
        expected = {"Wz": (z, d), "Wr": (z, d), "Wh": (z, d),
                    "Rz": (z, z), "Rr": (z, z), "Rh": (z, z),
                    "bz": (z,), "br": (z,), "bh": (z,), "Wout": (o, z), "bout": (o,)}
        for name in BLOCKS:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != expected[name]:
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            setattr(self, name, arr)

    @property
    def input_dim(self) -> int:
        return self.Wz.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.Wz.shape[0]

    @property
    def out_dim(self) -> int:
        return self.Wout.shape[0]

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self) -> "GruParams":
        return GruParams(**{k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "GruParams":
        return GruParams(**{k: np.zeros_like(v) for k, v in self.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for _, v in self.items())

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "blocks": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "GruParams":
        if d.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"unsupported parameter checkpoint version {d.get('version')!r}")
        try:
            blocks = {k: np.asarray(d["blocks"][k]["data"], dtype=np.float64).reshape(d["blocks"][k]["shape"])
                      for k in BLOCKS}
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"malformed parameter checkpoint: {exc}") from None
        return cls(**blocks)


def init_params(seed: int, input_dim: int, hidden_size: int, out_dim: int) -> GruParams:
    """Glorot-uniform weights and zero biases."""
    if min(input_dim, hidden_size, out_dim) < 1:
        raise InvalidInputError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)

    def glorot(rows, cols):
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=(rows, cols))

    z = hidden_size
    return GruParams(
        Wz=glorot(z, input_dim), Wr=glorot(z, input_dim), Wh=glorot(z, input_dim),
        Rz=glorot(z, z), Rr=glorot(z, z), Rh=glorot(z, z),
        bz=np.zeros(z), br=np.zeros(z), bh=np.zeros(z),
        Wout=glorot(out_dim, z), bout=np.zeros(out_dim),
    )


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


@njit(cache=True)
def _forward_loop(Az, Ar, Ah, Rz, Rr, Rh, h0):
    n, z = Az.shape
    H = np.empty((n + 1, z))
    Zg = np.empty((n, z))
    Rg = np.empty((n, z))
    Hc = np.empty((n, z))
    Q = np.empty((n, z))
    H[0] = h0
    for k in range(n):
        h = H[k]
        zk = 1.0 / (1.0 + np.exp(-(Az[k] + Rz @ h)))
        rk = 1.0 / (1.0 + np.exp(-(Ar[k] + Rr @ h)))
        qk = Rh @ h
        hc = np.tanh(Ah[k] + rk * qk)
        H[k + 1] = (1.0 - zk) * h + zk * hc
        Zg[k] = zk
        Rg[k] = rk
        Hc[k] = hc
        Q[k] = qk
    return H, Zg, Rg, Hc, Q


@njit(cache=True)
def _backward_loop(dH, H, Zg, Rg, Hc, Q, Rz, Rr, Rh):
    n, z = dH.shape
    dAz = np.empty((n, z))
    dAr = np.empty((n, z))
    dAh = np.empty((n, z))
    dQ = np.empty((n, z))
    dh_next = np.zeros(z)
    RzT = np.ascontiguousarray(Rz.T)
    RrT = np.ascontiguousarray(Rr.T)
    RhT = np.ascontiguousarray(Rh.T)
    for k in range(n - 1, -1, -1):
        dh = dH[k] + dh_next
        zk = Zg[k]
        hc = Hc[k]
        h_prev = H[k]
        dah = dh * zk * (1.0 - hc * hc)
        daz = dh * (hc - h_prev) * zk * (1.0 - zk)
        dar = dah * Q[k] * Rg[k] * (1.0 - Rg[k])
        dq = dah * Rg[k]
        dAz[k] = daz
        dAr[k] = dar
        dAh[k] = dah
        dQ[k] = dq
        dh_next = dh * (1.0 - zk) + RzT @ daz + RrT @ dar + RhT @ dq
    return dAz, dAr, dAh, dQ, dh_next


@dataclass
class SequenceCache:
    """Intermediates of one forward pass, consumed by :func:`rnn_backward`."""

    S: np.ndarray
    H: np.ndarray   # (n + 1, z), H[0] is the initial hidden state
    Z: np.ndarray
    R: np.ndarray
    Hc: np.ndarray
    Q: np.ndarray   # Rh @ h_prev, before the reset gate


def gru_cell_forward(p: GruParams, s, h_prev):
    """One GRU step. Returns the new hidden state and a cache dict."""
    s = np.asarray(s, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    if s.shape != (p.input_dim,) or h_prev.shape != (p.hidden_size,):
        raise InvalidInputError("input or hidden state has the wrong dimension")
    z = _sigmoid(p.Wz @ s + p.bz + p.Rz @ h_prev)
    r = _sigmoid(p.Wr @ s + p.br + p.Rr @ h_prev)
    q = p.Rh @ h_prev
    hc = np.tanh(p.Wh @ s + p.bh + r * q)
    h = (1.0 - z) * h_prev + z * hc
    return h, {"s": s, "h_prev": h_prev, "z": z, "r": r, "hc": hc, "q": q}


def rnn_forward(p: GruParams, seq, h0=None):
    """Run the GRU over ``seq`` of shape (n, input_dim).

    Returns ``(outputs, h_last, cache)`` where ``outputs[k] = Wout h_k + bout``.
    """
    S = np.ascontiguousarray(seq, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0 or S.shape[1] != p.input_dim:
        raise InvalidInputError(f"sequence must have shape (n>0, {p.input_dim}), got {S.shape}")
    h0 = np.zeros(p.hidden_size) if h0 is None else np.ascontiguousarray(h0, dtype=np.float64)
    Az = S @ p.Wz.T + p.bz
    Ar = S @ p.Wr.T + p.br
    Ah = S @ p.Wh.T + p.bh
    H, Z, R, Hc, Q = _forward_loop(Az, Ar, Ah, p.Rz, p.Rr, p.Rh, h0)
    outputs = H[1:] @ p.Wout.T + p.bout
    return outputs, H[-1].copy(), SequenceCache(S, H, Z, R, Hc, Q)


def rnn_backward(p: GruParams, cache: SequenceCache, output_grads) -> GruParams:
    """Gradient of ``sum_k <output_grads[k], outputs[k]>`` w.r.t. every block.

    The initial hidden state is treated as a constant (truncated BPTT
    boundary).
    """
    G = np.ascontiguousarray(output_grads, dtype=np.float64)
    H = cache.H
    Hs = H[1:]
    Hprev = H[:-1]
    if G.shape != (Hs.shape[0], p.out_dim):
        raise InvalidInputError(f"output_grads must have shape {(Hs.shape[0], p.out_dim)}")
    dH = G @ p.Wout
    dAz, dAr, dAh, dQ, _ = _backward_loop(dH, H, cache.Z, cache.R, cache.Hc, cache.Q,
                                          p.Rz, p.Rr, p.Rh)
    S = cache.S
    return GruParams(
        Wz=dAz.T @ S, Wr=dAr.T @ S, Wh=dAh.T @ S,
        Rz=dAz.T @ Hprev, Rr=dAr.T @ Hprev, Rh=dQ.T @ Hprev,
        bz=dAz.sum(axis=0), br=dAr.sum(axis=0), bh=dAh.sum(axis=0),
        Wout=G.T @ Hs, bout=G.sum(axis=0),
    )
