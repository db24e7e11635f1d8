"""Two-layer GRU regressor for soft level estimates, built on bare numpy.

A length-N voltage window passes through two stacked GRU layers (hidden
width 20), then a shared per-step affine map and a softplus that pins
estimates positive.  Training is plain backprop-through-time with Adam on a
mean-squared objective; layers can be frozen for fine-tuning.  Each gate
carries separate input-side and recurrence-side biases, so one layer holds
``3*L*(D + L + 2)`` scalars.

All state lives in float64 arrays; checkpoints round-trip them bit-exactly
through hex float text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.special import expit

__all__ = [
    "GruLayerParams",
    "NetworkParams",
    "TrainConfig",
    "AdamState",
    "CheckpointError",
    "init_xavier",
    "forward",
    "forward_many",
    "loss_mse",
    "gradients",
    "adam_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "flashlab-gru-checkpoint"
CHECKPOINT_VERSION = 1

# Gate blocks are stacked along the first axis in this order.
GATES = ("update", "reset", "candidate")


class CheckpointError(ValueError):
    pass


@dataclass
class GruLayerParams:
    """One GRU layer: stacked gate weights plus paired bias vectors.

    ``w_x``/``w_h`` hold the update, reset, and candidate blocks stacked to
    (3L, D) and (3L, L); ``b_x``/``b_h`` are the matching input-side and
    recurrence-side biases.
    """

    w_x: np.ndarray
    w_h: np.ndarray
    b_x: np.ndarray
    b_h: np.ndarray

    def __post_init__(self) -> None:
        l3, d = self.w_x.shape
        if l3 % 3 != 0:
            raise ValueError("stacked gate dimension must be a multiple of 3")
        l = l3 // 3
        if self.w_h.shape != (l3, l) or self.b_x.shape != (l3,) or self.b_h.shape != (l3,):
            raise ValueError("inconsistent GRU tensor shapes")

    @property
    def hidden_width(self) -> int:
        return self.w_x.shape[0] // 3

    @property
    def input_width(self) -> int:
        return self.w_x.shape[1]

    def gate(self, which: str, side: str) -> np.ndarray:
        """View of one gate's matrix/bias: side is 'x', 'h', 'bx', or 'bh'."""
        i = GATES.index(which)
        l = self.hidden_width
        src = {"x": self.w_x, "h": self.w_h, "bx": self.b_x, "bh": self.b_h}[side]
        return src[i * l : (i + 1) * l]

    def parameter_count(self) -> int:
        return 3 * self.hidden_width * (self.input_width + self.hidden_width + 2)


@dataclass
class NetworkParams:
    """Full detector: two GRU layers, the output affine map, freeze flags."""

    gru1: GruLayerParams
    gru2: GruLayerParams
    w_out: np.ndarray
    b_out: np.ndarray
    frozen: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.gru2.input_width != self.gru1.hidden_width:
            raise ValueError("gru2 input width must match gru1 hidden width")
        if self.w_out.shape != (self.gru2.hidden_width,) or self.b_out.shape != (1,):
            raise ValueError("output layer shapes inconsistent with gru2")
        bad = set(self.frozen) - {"gru1", "gru2", "out"}
        if bad:
            raise ValueError(f"unknown frozen layer names {sorted(bad)}")

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "gru1.w_x", self.gru1.w_x
        yield "gru1.w_h", self.gru1.w_h
        yield "gru1.b_x", self.gru1.b_x
        yield "gru1.b_h", self.gru1.b_h
        yield "gru2.w_x", self.gru2.w_x
        yield "gru2.w_h", self.gru2.w_h
        yield "gru2.b_x", self.gru2.b_x
        yield "gru2.b_h", self.gru2.b_h
        yield "out.w", self.w_out
        yield "out.b", self.b_out

    def copy(self) -> "NetworkParams":
        return _from_tensors({k: v.copy() for k, v in self.tensors()}, self.frozen)

    def total_parameters(self) -> int:
        return sum(v.size for _, v in self.tensors())

    def trainable_parameters(self) -> int:
        return sum(
            v.size for name, v in self.tensors() if name.split(".")[0] not in self.frozen
        )


def _from_tensors(t: dict[str, np.ndarray], frozen: tuple[str, ...]) -> NetworkParams:
    return NetworkParams(
        gru1=GruLayerParams(t["gru1.w_x"], t["gru1.w_h"], t["gru1.b_x"], t["gru1.b_h"]),
        gru2=GruLayerParams(t["gru2.w_x"], t["gru2.w_h"], t["gru2.b_x"], t["gru2.b_h"]),
        w_out=t["out.w"],
        b_out=t["out.b"],
        frozen=frozen,
    )


@dataclass
class TrainConfig:
    """Optimizer and loop settings; defaults match the reference recipe."""

    epochs: int = 50
    batch_size: int = 20
    window: int = 20
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.window < 1:
            raise ValueError("bad training loop settings")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.learning_rate <= 0.0 or self.eps <= 0.0:
            raise ValueError("learning_rate and eps must be positive")


def init_xavier(
    seed: int, hidden_width: int = 20, input_width: int = 1
) -> NetworkParams:
    """Uniform Xavier weights (limit sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.Generator(np.random.Philox(seed))
    l, d = hidden_width, input_width

    def uniform(shape, fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    def layer(din):
        return GruLayerParams(
            w_x=uniform((3 * l, din), din, l),
            w_h=uniform((3 * l, l), l, l),
            b_x=np.zeros(3 * l),
            b_h=np.zeros(3 * l),
        )

    return NetworkParams(
        gru1=layer(d),
        gru2=layer(l),
        w_out=uniform((l,), l, 1),
        b_out=np.zeros(1),
    )


def _gru_layer_forward(layer: GruLayerParams, x: np.ndarray, want_cache: bool):
    """Run one layer over (B, N, D) inputs; returns (B, N, L) hidden states."""
    b, n, _ = x.shape
    l = layer.hidden_width
    # Input-side affine terms for every step at once.
    xg = x.reshape(b * n, -1) @ layer.w_x.T + layer.b_x
    xg = xg.reshape(b, n, 3 * l)
    h = np.zeros((b, l))
    hs = np.empty((b, n, l))
    cache = {"z": np.empty((b, n, l)), "r": np.empty((b, n, l)),
             "n": np.empty((b, n, l)), "m": np.empty((b, n, l)),
             "h_prev": np.empty((b, n, l))} if want_cache else None
    for t in range(n):
        hg = h @ layer.w_h.T + layer.b_h
        z = expit(xg[:, t, :l] + hg[:, :l])
        r = expit(xg[:, t, l : 2 * l] + hg[:, l : 2 * l])
        m = hg[:, 2 * l :]
        cand = np.tanh(xg[:, t, 2 * l :] + r * m)
        if want_cache:
            cache["z"][:, t] = z
            cache["r"][:, t] = r
            cache["n"][:, t] = cand
            cache["m"][:, t] = m
            cache["h_prev"][:, t] = h
        h = (1.0 - z) * cand + z * h
        hs[:, t] = h
    return hs, cache


def _gru_layer_backward(
    layer: GruLayerParams, x: np.ndarray, cache: dict, d_hs: np.ndarray
):
    """BPTT through one layer.

    ``d_hs`` holds dLoss/d(hidden state as emitted at each step).  Returns
    (param grads dict, dLoss/dx).
    """
    b, n, d = x.shape
    l = layer.hidden_width
    z, r, cand, m, h_prev = (cache[k] for k in ("z", "r", "n", "m", "h_prev"))
    dz = np.empty((b, n, l))
    dr = np.empty((b, n, l))
    dn = np.empty((b, n, l))
    dm = np.empty((b, n, l))
    dh = np.zeros((b, l))
    for t in range(n - 1, -1, -1):
        g = d_hs[:, t] + dh
        zt, rt, nt, mt, hp = z[:, t], r[:, t], cand[:, t], m[:, t], h_prev[:, t]
        dzt = g * (hp - nt) * zt * (1.0 - zt)
        dnt = g * (1.0 - zt) * (1.0 - nt * nt)
        dmt = dnt * rt
        drt = dnt * mt * rt * (1.0 - rt)
        dz[:, t], dr[:, t], dn[:, t], dm[:, t] = dzt, drt, dnt, dmt
        packed = np.concatenate([dzt, drt, dmt], axis=1)
        dh = g * zt + packed @ layer.w_h
    gx = np.concatenate([dz, dr, dn], axis=2).reshape(b * n, 3 * l)
    gh = np.concatenate([dz, dr, dm], axis=2).reshape(b * n, 3 * l)
    flat_x = x.reshape(b * n, d)
    flat_hp = h_prev.reshape(b * n, l)
    grads = {
        "w_x": gx.T @ flat_x,
        "w_h": gh.T @ flat_hp,
        "b_x": gx.sum(axis=0),
        "b_h": gh.sum(axis=0),
    }
    dx = (gx @ layer.w_x).reshape(b, n, d)
    return grads, dx


def _forward_batch(params: NetworkParams, windows: np.ndarray, want_cache: bool):
    x1 = windows[:, :, None]
    h1, c1 = _gru_layer_forward(params.gru1, x1, want_cache)
    h2, c2 = _gru_layer_forward(params.gru2, h1, want_cache)
    y = h2 @ params.w_out + params.b_out[0]
    out = np.logaddexp(0.0, y)  # softplus
    cache = {"x1": x1, "h1": h1, "h2": h2, "y": y, "c1": c1, "c2": c2}
    return out, cache


def _backward_batch(params: NetworkParams, cache: dict, d_out: np.ndarray):
    h2, y = cache["h2"], cache["y"]
    dy = d_out * expit(y)
    grads = {
        "out.w": np.einsum("bn,bnl->l", dy, h2),
        "out.b": np.array([dy.sum()]),
    }
    d_h2 = dy[:, :, None] * params.w_out
    g2, d_h1 = _gru_layer_backward(params.gru2, cache["h1"], cache["c2"], d_h2)
    g1, _ = _gru_layer_backward(params.gru1, cache["x1"], cache["c1"], d_h1)
    for k, v in g1.items():
        grads[f"gru1.{k}"] = v
    for k, v in g2.items():
        grads[f"gru2.{k}"] = v
    return grads


def forward_many(params: NetworkParams, windows: np.ndarray) -> np.ndarray:
    """Per-step level estimates for a (B, N) batch of voltage windows."""
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 2:
        raise ValueError("windows must be a (batch, steps) array")
    out, _ = _forward_batch(params, windows, want_cache=False)
    return out


def forward(params: NetworkParams, window: np.ndarray) -> np.ndarray:
    """Level estimates for one voltage window; one value per step."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 1 or window.size == 0:
        raise ValueError("window must be a non-empty 1-D array")
    return forward_many(params, window[None, :])[0]


def loss_mse(estimates: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error between estimates and written levels."""
    estimates = np.asarray(estimates, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if estimates.shape != targets.shape:
        raise ValueError("estimate/target shape mismatch")
    diff = estimates - targets
    return float(np.mean(diff * diff))


def gradients(
    params: NetworkParams, window: np.ndarray, targets: np.ndarray
) -> dict[str, np.ndarray]:
    """Exact MSE gradients for one window, keyed like ``params.tensors()``.

    Frozen layers are still differentiated; the optimizer is what skips them.
    """
    window = np.asarray(window, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if window.shape != targets.shape or window.ndim != 1:
        raise ValueError("window and targets must be matching 1-D arrays")
    out, cache = _forward_batch(params, window[None, :], want_cache=True)
    d_out = 2.0 * (out - targets[None, :]) / targets.size
    return _backward_batch(params, cache, d_out)


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.tensors()},
            v={k: np.zeros_like(a) for k, a in params.tensors()},
        )


def adam_step(
    state: AdamState,
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    config: TrainConfig,
    freeze: tuple[str, ...] | None = None,
) -> NetworkParams:
    """One Adam update; returns new params, advances ``state`` in place.

    Tensors of layers named in ``freeze`` (default: ``params.frozen``) are
    carried over untouched, bit for bit.
    """
    frozen = params.frozen if freeze is None else tuple(freeze)
    state.t += 1
    b1c = 1.0 - config.beta1**state.t
    b2c = 1.0 - config.beta2**state.t
    new: dict[str, np.ndarray] = {}
    for name, value in params.tensors():
        if name.split(".")[0] in frozen:
            new[name] = value
            continue
        g = grads[name]
        state.m[name] = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        state.v[name] = config.beta2 * state.v[name] + (1.0 - config.beta2) * g * g
        m_hat = state.m[name] / b1c
        v_hat = state.v[name] / b2c
        new[name] = value - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return _from_tensors(new, frozen)


def train(
    dataset,
    config: TrainConfig,
    init_params: NetworkParams,
    freeze: tuple[str, ...] | None = None,
) -> tuple[NetworkParams, list[float]]:
    """Fit the detector to a labeled dataset.

    The samples are cut into non-overlapping ``config.window``-step windows
    (any remainder is dropped), shuffled each epoch with the config seed, and
    consumed in mini-batches: forward, BPTT, one Adam step per batch.

    Parameters
    ----------
    dataset : DomainDataset
        Must be labeled; voltages and written levels are read positionally.
    config : TrainConfig
    init_params : NetworkParams
        Starting point; not modified.
    freeze : tuple of str, optional
        Layer names to pin (e.g. ``("gru1",)``); defaults to the flags
        already on ``init_params``.

    Returns
    -------
    (params, losses) : trained parameters and the per-epoch mean batch loss.
    """
    if dataset.labels is None:
        raise ValueError("training requires a labeled dataset")
    n_windows = dataset.voltages.size // config.window
    if n_windows == 0:
        raise ValueError(
            f"dataset smaller than one window ({dataset.voltages.size} < {config.window})"
        )
    frozen = init_params.frozen if freeze is None else tuple(freeze)
    v = np.asarray(dataset.voltages, dtype=float)
    lab = np.asarray(dataset.labels, dtype=float)
    used = n_windows * config.window
    windows = v[:used].reshape(n_windows, config.window)
    targets = lab[:used].reshape(n_windows, config.window)

    params = _from_tensors({k: a.copy() for k, a in init_params.tensors()}, frozen)
    if config.epochs == 0:
        return params, []
    state = AdamState.zeros(params)
    rng = np.random.Generator(np.random.Philox(config.seed))
    losses: list[float] = []
    scale_n = config.window
    for _ in range(config.epochs):
        order = rng.permutation(n_windows)
        epoch_losses = []
        for start in range(0, n_windows, config.batch_size):
            idx = order[start : start + config.batch_size]
            out, cache = _forward_batch(params, windows[idx], want_cache=True)
            diff = out - targets[idx]
            epoch_losses.append(float(np.mean(diff * diff)))
            d_out = 2.0 * diff / (idx.size * scale_n)
            grads = _backward_batch(params, cache, d_out)
            params = adam_step(state, params, grads, config, frozen)
        losses.append(float(np.mean(epoch_losses)))
    return params, losses


def save_checkpoint(params: NetworkParams, path: str | Path) -> None:
    """Write a versioned text checkpoint; values as exact hex floats."""
    lines = [f"{CHECKPOINT_FORMAT} version {CHECKPOINT_VERSION}"]
    lines.append("frozen " + (" ".join(params.frozen) if params.frozen else "-"))
    for name, value in params.tensors():
        dims = " ".join(str(d) for d in value.shape)
        lines.append(f"tensor {name} {dims}")
        rows = value.reshape(value.shape[0], -1) if value.ndim > 1 else value[None, :]
        for row in rows:
            lines.append(" ".join(float(x).hex() for x in row))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> NetworkParams:
    """Read a checkpoint written by `save_checkpoint`, bit-exactly."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise CheckpointError(f"{path}: empty checkpoint file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != CHECKPOINT_FORMAT or head[1] != "version":
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    try:
        version = int(head[2])
    except ValueError:
        raise CheckpointError(f"{path}: malformed version field {head[2]!r}") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint is version {version}, this reader supports "
            f"version {CHECKPOINT_VERSION}"
        )
    if len(lines) < 2 or not lines[1].startswith("frozen"):
        raise CheckpointError(f"{path}: missing frozen-layer line")
    frozen_tokens = lines[1].split()[1:]
    frozen = () if frozen_tokens == ["-"] else tuple(frozen_tokens)

    tensors: dict[str, np.ndarray] = {}
    i = 2
    while i < len(lines) and lines[i].strip() != "end":
        parts = lines[i].split()
        if parts[0] != "tensor" or len(parts) < 3:
            raise CheckpointError(f"{path}: line {i + 1}: expected tensor header")
        name = parts[1]
        shape = tuple(int(p) for p in parts[2:])
        n_rows = shape[0] if len(shape) > 1 else 1
        row_len = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        data = np.empty((n_rows, row_len))
        for r in range(n_rows):
            i += 1
            if i >= len(lines):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            row = lines[i].split()
            if len(row) != row_len:
                raise CheckpointError(
                    f"{path}: line {i + 1}: tensor {name!r} row has {len(row)} "
                    f"values, expected {row_len}"
                )
            data[r] = [float.fromhex(tok) for tok in row]
        tensors[name] = data.reshape(shape)
        i += 1
    if i >= len(lines):
        raise CheckpointError(f"{path}: missing end marker")
    expected = {
        "gru1.w_x", "gru1.w_h", "gru1.b_x", "gru1.b_h",
        "gru2.w_x", "gru2.w_h", "gru2.b_x", "gru2.b_h",
        "out.w", "out.b",
    }
    missing = expected - tensors.keys()
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    return _from_tensors(tensors, frozen)
