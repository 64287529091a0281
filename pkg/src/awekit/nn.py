"""Recurrent cells, parameters, optimizers, schedulers, and checkpoints.

The LSTM cell follows the six gate/state updates (input, forget, output
gates; candidate cell; cell memory c_t = i*c~ + f*c_{t-1}; hidden
h_t = o*tanh(c_t)); the GRU cell follows the four updates with
h_t = u*h_prev + (1-u)*h~. Weights are stored split into input and
recurrent blocks so whole-sequence input contributions can be computed
with one matmul before the time loop.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"CADP"
CHECKPOINT_VERSION = 1


class Parameter:
    """A named tensor plus whatever per-slot state the optimizer attaches."""

    def __init__(self, name: str, values):
        self.name = name
        self.tensor = Tensor(values)
        self.state: dict[str, np.ndarray] = {}
        self.frozen = False

    @property
    def values(self):
        return self.tensor.values

    @values.setter
    def values(self, arr):
        self.tensor.values = arr

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.values.shape})"


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """U(-1/sqrt(fan_in), +1/sqrt(fan_in)) for recurrent and affine weights."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def normal_init(rng: np.random.Generator, shape) -> np.ndarray:
    """N(0, 1) for embedding tables."""
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# Recurrent cells


@dataclass
class LstmParams:
    """Gate-fused LSTM weights; column blocks ordered [i | f | c~ | o]."""

    w_x: Parameter
    w_h: Parameter
    b: Parameter
    hidden: int

    @staticmethod
    def create(name: str, input_dim: int, hidden: int, rng: np.random.Generator) -> "LstmParams":
        fan = input_dim + hidden
        return LstmParams(
            w_x=Parameter(f"{name}.w_x", uniform_init(rng, (input_dim, 4 * hidden), fan)),
            w_h=Parameter(f"{name}.w_h", uniform_init(rng, (hidden, 4 * hidden), fan)),
            b=Parameter(f"{name}.b", np.zeros(4 * hidden)),
            hidden=hidden,
        )

    def parameters(self):
        return [self.w_x, self.w_h, self.b]


@dataclass
class GruParams:
    """GRU weights; gate block columns ordered [r | u], candidate separate."""

    w_x_ru: Parameter
    w_h_ru: Parameter
    b_ru: Parameter
    w_x_c: Parameter
    w_h_c: Parameter
    b_c: Parameter
    hidden: int

    @staticmethod
    def create(name: str, input_dim: int, hidden: int, rng: np.random.Generator) -> "GruParams":
        fan = input_dim + hidden
        return GruParams(
            w_x_ru=Parameter(f"{name}.w_x_ru", uniform_init(rng, (input_dim, 2 * hidden), fan)),
            w_h_ru=Parameter(f"{name}.w_h_ru", uniform_init(rng, (hidden, 2 * hidden), fan)),
            b_ru=Parameter(f"{name}.b_ru", np.zeros(2 * hidden)),
            w_x_c=Parameter(f"{name}.w_x_c", uniform_init(rng, (input_dim, hidden), fan)),
            w_h_c=Parameter(f"{name}.w_h_c", uniform_init(rng, (hidden, hidden), fan)),
            b_c=Parameter(f"{name}.b_c", np.zeros(hidden)),
            hidden=hidden,
        )

    def parameters(self):
        return [self.w_x_ru, self.w_h_ru, self.b_ru, self.w_x_c, self.w_h_c, self.b_c]


def _lstm_from_gates(gates_x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams):
    h = p.hidden
    z = ad.add(gates_x, ad.matmul(h_prev, p.w_h.tensor))
    i = ad.sigmoid(ad.getitem(z, (slice(None), slice(0, h))))
    f = ad.sigmoid(ad.getitem(z, (slice(None), slice(h, 2 * h))))
    c_tilde = ad.tanh(ad.getitem(z, (slice(None), slice(2 * h, 3 * h))))
    o = ad.sigmoid(ad.getitem(z, (slice(None), slice(3 * h, 4 * h))))
    c = ad.add(ad.mul(i, c_tilde), ad.mul(f, c_prev))
    h_t = ad.mul(o, ad.tanh(c))
    return h_t, c


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams):
    """One LSTM step on a (B, D) input; returns (h_t, c_t), each (B, H)."""
    gates_x = ad.affine(x, p.w_x.tensor, p.b.tensor)
    return _lstm_from_gates(gates_x, h_prev, c_prev, p)


def _gru_from_gates(gates_x: Tensor, cand_x: Tensor, h_prev: Tensor, p: GruParams):
    h = p.hidden
    ru = ad.sigmoid(ad.add(gates_x, ad.matmul(h_prev, p.w_h_ru.tensor)))
    r = ad.getitem(ru, (slice(None), slice(0, h)))
    u = ad.getitem(ru, (slice(None), slice(h, 2 * h)))
    h_tilde = ad.tanh(ad.add(cand_x, ad.matmul(ad.mul(r, h_prev), p.w_h_c.tensor)))
    one_minus_u = ad.add(ad.scale(u, -1.0), 1.0)
    return ad.add(ad.mul(u, h_prev), ad.mul(one_minus_u, h_tilde))


def gru_cell(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One GRU step on a (B, D) input; returns h_t of shape (B, H)."""
    gates_x = ad.affine(x, p.w_x_ru.tensor, p.b_ru.tensor)
    cand_x = ad.affine(x, p.w_x_c.tensor, p.b_c.tensor)
    return _gru_from_gates(gates_x, cand_x, h_prev, p)


def run_recurrent_layer(params, x: Tensor, mask: np.ndarray, reverse: bool = False) -> Tensor:
    """Run one direction of a recurrent layer over a padded batch.

    x:    (B, T, D) tensor, zero-padded at the tail of each sequence.
    mask: (B, T) 1/0 array. At padded steps the state carries over, so the
          backward direction can start from the padded tail and the state
          stays zero until real frames begin.

    Returns (B, T, H) outputs, zeroed at padded steps.
    """
    B, T, D = x.values.shape
    is_lstm = isinstance(params, LstmParams)
    H = params.hidden
    flat = ad.reshape(x, (B * T, D))
    if is_lstm:
        gates_all = ad.reshape(ad.affine(flat, params.w_x.tensor, params.b.tensor), (B, T, 4 * H))
    else:
        gates_all = ad.reshape(ad.affine(flat, params.w_x_ru.tensor, params.b_ru.tensor), (B, T, 2 * H))
        cand_all = ad.reshape(ad.affine(flat, params.w_x_c.tensor, params.b_c.tensor), (B, T, H))

    h = ad.constant(np.zeros((B, H)))
    c = ad.constant(np.zeros((B, H)))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    outputs: list[Tensor | None] = [None] * T
    for t in steps:
        m = mask[:, t : t + 1]
        gx = ad.getitem(gates_all, (slice(None), t))
        if is_lstm:
            h_new, c_new = _lstm_from_gates(gx, h, c, params)
            c = ad.masked_blend(c_new, c, m)
        else:
            cx = ad.getitem(cand_all, (slice(None), t))
            h_new = _gru_from_gates(gx, cx, h, params)
        h = ad.masked_blend(h_new, h, m)
        outputs[t] = ad.mul_const(h, m)
    return ad.stack(outputs, axis=1)


# ---------------------------------------------------------------------------
# Optimizers


class Adam:
    """Adam with bias correction; state lives on each Parameter."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params: list[Parameter]):
        for p in params:
            if p.frozen or p.tensor.grad is None:
                continue
            g = p.tensor.grad
            st = p.state
            if "m" not in st:
                st["m"] = np.zeros_like(p.values)
                st["v"] = np.zeros_like(p.values)
                st["t"] = 0
            st["t"] += 1
            st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * g * g
            m_hat = st["m"] / (1 - self.beta1 ** st["t"])
            v_hat = st["v"] / (1 - self.beta2 ** st["t"])
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class NesterovSGD:
    """SGD with Nesterov momentum: v <- mu*v + g; p -= lr*(g + mu*v)."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum

    def step(self, params: list[Parameter]):
        mu = self.momentum
        for p in params:
            if p.frozen:
                continue
            g = p.tensor.grad
            st = p.state
            if g is None:
                # zero gradient this round; momentum still moves the weights
                if mu != 0.0 and "vel" in st:
                    st["vel"] = mu * st["vel"]
                    p.values -= self.lr * mu * st["vel"]
                continue
            if mu == 0.0:
                p.values -= self.lr * g
                continue
            if "vel" not in st:
                st["vel"] = np.zeros_like(p.values)
            st["vel"] = mu * st["vel"] + g
            p.values -= self.lr * (g + mu * st["vel"])


def zero_grads(params: list[Parameter]):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Learning-rate schedules


@dataclass
class SchedulerDecision:
    lr: float
    improved: bool
    decayed: bool
    reset_to_best: bool
    stop: bool


class PlateauScheduler:
    """Decay the learning rate when a dev metric stops improving.

    After ``patience`` evaluations without a new best, lr is multiplied by
    ``factor`` and a reset-to-best signal is raised; when lr falls below
    ``min_lr`` a stop signal is raised. ``mode`` is "max" for scores like
    average precision and "min" for error rates.
    """

    def __init__(self, lr: float, patience: int, factor: float, min_lr: float, mode: str = "max"):
        if not 0.0 < factor <= 1.0:
            raise ValueError("factor must be in (0, 1]")
        if mode not in ("max", "min"):
            raise ValueError("mode must be 'max' or 'min'")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.mode = mode
        self.best: float | None = None
        self.bad_count = 0

    def update(self, metric: float) -> SchedulerDecision:
        better = (
            self.best is None
            or (self.mode == "max" and metric > self.best)
            or (self.mode == "min" and metric < self.best)
        )
        if better:
            self.best = metric
            self.bad_count = 0
            return SchedulerDecision(self.lr, True, False, False, False)
        self.bad_count += 1
        if self.bad_count >= self.patience:
            self.lr *= self.factor
            self.bad_count = 0
            return SchedulerDecision(self.lr, False, True, True, self.lr < self.min_lr)
        return SchedulerDecision(self.lr, False, False, False, False)


class LossPlateauHeuristic:
    """Batch-loss plateau rule: an epoch is a plateau when 99% of its mean
    batch loss still exceeds the running mean over the previous 3 epochs;
    3 consecutive plateau epochs trigger a decay."""

    def __init__(self, lr: float, factor: float = 0.1, window: int = 3, streak: int = 3, ratio: float = 0.99):
        self.lr = lr
        self.factor = factor
        self.window = window
        self.streak = streak
        self.ratio = ratio
        self.history: list[float] = []
        self.plateau_run = 0

    def update(self, epoch_mean_loss: float) -> float:
        if len(self.history) >= self.window:
            running = float(np.mean(self.history[-self.window :]))
            if self.ratio * epoch_mean_loss > running:
                self.plateau_run += 1
            else:
                self.plateau_run = 0
            if self.plateau_run >= self.streak:
                self.lr *= self.factor
                self.plateau_run = 0
        self.history.append(epoch_mean_loss)
        return self.lr


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, params: list[Parameter]):
    """Named-parameter archive: magic, version, then per-parameter name,
    shape, and little-endian f32 payload. Bit-exact round trip."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            f.write(struct.pack("<H", len(name)))
            f.write(name)
            f.write(struct.pack("<I", p.values.ndim))
            f.write(struct.pack(f"<{p.values.ndim}I", *p.values.shape))
            f.write(p.values.astype("<f4").tobytes())


class CheckpointError(Exception):
    pass


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a parameter archive back as name -> float64 array."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        out[name] = arr.astype(np.float64)
    if off != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    return out


def assign_from_checkpoint(params: list[Parameter], loaded: dict[str, np.ndarray], strict: bool = True):
    """Copy loaded arrays into matching parameters by name."""
    byname = {p.name: p for p in params}
    for name, arr in loaded.items():
        p = byname.get(name)
        if p is None:
            if strict:
                raise CheckpointError(f"no parameter named {name}")
            continue
        if p.values.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}: {p.values.shape} vs {arr.shape}")
        p.values[...] = arr
