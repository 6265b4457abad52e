"""Minimal neural-network substrate: MLP, reverse-mode tape, Gaussian head, Adam.

The tape covers exactly the operations the PPO losses need (affine, tanh,
elementwise exp/log/square, sums/means, minimum, clip, slicing/reshape); it is
not a general autodiff. Parameters live in flat float64 vectors so optimizers,
checkpoints, and finite-difference checks all see one contiguous store.

Networks are in_dim -> hidden -> ... -> out_dim with tanh on hidden layers and
a linear output. Weights use a scaled-uniform init with Xavier-style limits
(limit = gain * sqrt(6 / (fan_in + fan_out))), biases start at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Tensor",
    "minimum",
    "MlpArch",
    "MlpParams",
    "mlp_arch",
    "init_mlp",
    "forward",
    "mlp_tensor",
    "grad",
    "GaussianPolicy",
    "LOG_STD_MIN",
    "LOG_STD_MAX",
    "AdamState",
    "adam_init",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

LOG_2PI = math.log(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    """A node of the reverse-mode tape wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @staticmethod
    def _wrap(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _accum(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        self.grad = g if self.grad is None else self.grad + g

    # ---- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)
        out = Tensor(self.data + other.data, (self, other))
        out._backward = lambda g: (self._accum(g), other._accum(g))
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = self._wrap(other)
        out = Tensor(self.data - other.data, (self, other))
        out._backward = lambda g: (self._accum(g), other._accum(-g))
        return out

    def __mul__(self, other):
        other = self._wrap(other)
        out = Tensor(self.data * other.data, (self, other))
        out._backward = lambda g: (self._accum(g * other.data), other._accum(g * self.data))
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __matmul__(self, other):
        other = self._wrap(other)
        out = Tensor(self.data @ other.data, (self, other))

        def backward(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)

        out._backward = backward
        return out

    # ---- elementwise ----------------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor(y, (self,))
        out._backward = lambda g: self._accum(g * (1.0 - y * y))
        return out

    def exp(self):
        y = np.exp(self.data)
        out = Tensor(y, (self,))
        out._backward = lambda g: self._accum(g * y)
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))
        out._backward = lambda g: self._accum(g / self.data)
        return out

    def square(self):
        out = Tensor(self.data * self.data, (self,))
        out._backward = lambda g: self._accum(g * 2.0 * self.data)
        return out

    def clip(self, lo: float, hi: float):
        mask = (self.data >= lo) & (self.data <= hi)
        out = Tensor(np.clip(self.data, lo, hi), (self,))
        out._backward = lambda g: self._accum(g * mask)
        return out

    # ---- reductions & shape ---------------------------------------------

    def sum(self, axis=None):
        out = Tensor(self.data.sum(axis=axis), (self,))

        def backward(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.data.shape))
            else:
                self._accum(np.broadcast_to(np.expand_dims(g, axis), self.data.shape))

        out._backward = backward
        return out

    def mean(self):
        n = self.data.size
        out = Tensor(self.data.mean(), (self,))
        out._backward = lambda g: self._accum(np.broadcast_to(g / n, self.data.shape))
        return out

    def reshape(self, shape):
        out = Tensor(self.data.reshape(shape), (self,))
        out._backward = lambda g: self._accum(g.reshape(self.data.shape))
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], (self,))

        def backward(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            self._accum(full)

        out._backward = backward
        return out

    # ---- reverse pass ----------------------------------------------------

    def backward(self) -> None:
        """Populate .grad of every node reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; gradient follows the smaller branch (ties go to a)."""
    mask = a.data <= b.data
    out = Tensor(np.where(mask, a.data, b.data), (a, b))

    def backward(g):
        a._accum(g * mask)
        b._accum(g * ~mask)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# MLP parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpArch:
    """Layer widths (in, hidden..., out) plus the flat-vector index map."""

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) < 2 or any(d <= 0 for d in self.dims):
            raise ValueError(f"invalid layer dims: {self.dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in zip(self.dims[:-1], self.dims[1:]))

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def segments(self):
        """Yield (w_slice, b_slice, fan_in, fan_out) per layer, in flat order."""
        offset = 0
        for fi, fo in zip(self.dims[:-1], self.dims[1:]):
            w = slice(offset, offset + fi * fo)
            b = slice(offset + fi * fo, offset + fi * fo + fo)
            offset = b.stop
            yield w, b, fi, fo


def mlp_arch(in_dim: int, out_dim: int, hidden=(64, 64)) -> MlpArch:
    return MlpArch((in_dim, *hidden, out_dim))


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Flat parameter store for one MLP."""

    arch: MlpArch
    flat: np.ndarray

    def __post_init__(self):
        flat = np.asarray(self.flat, dtype=np.float64).reshape(-1)
        if flat.shape[0] != self.arch.n_params:
            raise ValueError(
                f"flat length {flat.shape[0]} does not match architecture "
                f"{self.arch.dims} ({self.arch.n_params} params)"
            )
        if not np.all(np.isfinite(flat)):
            raise ValueError("parameters contain non-finite entries")
        object.__setattr__(self, "flat", flat)


def init_mlp(rng: np.random.Generator, arch: MlpArch,
             hidden_gain: float = math.sqrt(2.0), out_gain: float = 1.0) -> MlpParams:
    """Scaled-uniform init; the output layer gets its own (usually small) gain."""
    flat = np.zeros(arch.n_params)
    n_layers = len(arch.dims) - 1
    for i, (w_sl, _b_sl, fi, fo) in enumerate(arch.segments()):
        gain = out_gain if i == n_layers - 1 else hidden_gain
        limit = gain * math.sqrt(6.0 / (fi + fo))
        flat[w_sl] = rng.uniform(-limit, limit, fi * fo)
    return MlpParams(arch, flat)


def forward(params: MlpParams, x) -> np.ndarray:
    """Feedforward pass (tanh hidden, linear output). Accepts (n,) or (B, n)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("forward: non-finite input")
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != params.arch.in_dim:
        raise ValueError(f"input dim mismatch: expected {params.arch.in_dim}, got {h.shape[-1]}")
    n_layers = len(params.arch.dims) - 1
    for i, (w_sl, b_sl, fi, fo) in enumerate(params.arch.segments()):
        W = params.flat[w_sl].reshape(fi, fo)
        h = h @ W + params.flat[b_sl]
        if i < n_layers - 1:
            h = np.tanh(h)
    return h[0] if single else h


def mlp_tensor(flat: Tensor, arch: MlpArch, x: np.ndarray) -> Tensor:
    """Tape version of :func:`forward` for a constant input batch (B, n)."""
    h = Tensor(np.asarray(x, dtype=np.float64))
    n_layers = len(arch.dims) - 1
    for i, (w_sl, b_sl, fi, fo) in enumerate(arch.segments()):
        W = flat[w_sl].reshape((fi, fo))
        h = h @ W + flat[b_sl]
        if i < n_layers - 1:
            h = h.tanh()
    return h


def grad(params, loss_fn) -> np.ndarray:
    """Gradient of a scalar loss with respect to the flat parameter vector.

    ``params`` is anything with a ``.flat`` vector (MlpParams, GaussianPolicy)
    or a plain ndarray. ``loss_fn`` receives the flat vector as a single tape
    leaf and must build the loss from it (e.g. via :func:`mlp_tensor`).
    """
    if isinstance(params, np.ndarray):
        flat = params
    else:
        flat = params.flat
    flat = np.asarray(flat, dtype=np.float64)
    leaf = Tensor(flat)
    loss = loss_fn(leaf)
    if loss.data.size != 1 or not np.isfinite(loss.data):
        raise FloatingPointError(f"loss is not a finite scalar: {loss.data}")
    loss.backward()
    return np.zeros_like(flat) if leaf.grad is None else leaf.grad


# ---------------------------------------------------------------------------
# Gaussian policy head
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GaussianPolicy:
    """Diagonal-Gaussian policy: MLP mean plus state-independent log-std.

    ``flat`` stores the mean network's parameters followed by ``action_dim``
    log-std entries, always kept inside [LOG_STD_MIN, LOG_STD_MAX].
    """

    arch: MlpArch
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64).reshape(-1)
        if self.flat.shape[0] != self.n_params:
            raise ValueError(
                f"policy flat length {self.flat.shape[0]} != expected {self.n_params}"
            )
        self.flat[self.arch.n_params:] = np.clip(
            self.flat[self.arch.n_params:], LOG_STD_MIN, LOG_STD_MAX
        )

    @classmethod
    def init(cls, rng: np.random.Generator, obs_dim: int, action_dim: int,
             hidden=(64, 64), init_log_std: float = 0.0) -> "GaussianPolicy":
        arch = mlp_arch(obs_dim, action_dim, hidden)
        mean = init_mlp(rng, arch, out_gain=0.01)
        flat = np.concatenate([mean.flat, np.full(action_dim, init_log_std)])
        return cls(arch, flat)

    @property
    def action_dim(self) -> int:
        return self.arch.out_dim

    @property
    def n_params(self) -> int:
        return self.arch.n_params + self.arch.out_dim

    @property
    def mean_params(self) -> MlpParams:
        return MlpParams(self.arch, self.flat[: self.arch.n_params])

    @property
    def log_std(self) -> np.ndarray:
        return np.clip(self.flat[self.arch.n_params:], LOG_STD_MIN, LOG_STD_MAX)

    def mean(self, obs) -> np.ndarray:
        return forward(self.mean_params, obs)

    def sample(self, obs, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean(obs)
        return mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)

    def log_prob(self, obs, actions) -> np.ndarray | float:
        """Diagonal-Gaussian log density of actions under the current params."""
        mu = self.mean(obs)
        log_std = self.log_std
        z = (np.asarray(actions, dtype=np.float64) - mu) / np.exp(log_std)
        quad = np.sum(z * z, axis=-1)
        return -0.5 * quad - np.sum(log_std) - 0.5 * self.action_dim * LOG_2PI

    def log_prob_tensor(self, leaf: Tensor, obs: np.ndarray, actions: np.ndarray) -> Tensor:
        """Tape version of :meth:`log_prob` for a batch; returns shape (B,)."""
        mu = mlp_tensor(leaf, self.arch, obs)
        log_std = leaf[self.arch.n_params:].clip(LOG_STD_MIN, LOG_STD_MAX)
        inv_std = (-log_std).exp()
        z = (Tensor(np.asarray(actions, dtype=np.float64)) - mu) * inv_std
        quad = z.square().sum(axis=1)
        const = 0.5 * self.action_dim * LOG_2PI
        return quad * (-0.5) - log_std.sum() - const

    def entropy(self) -> float:
        """Differential entropy of the diagonal Gaussian (obs-independent)."""
        return float(np.sum(self.log_std) + 0.5 * self.action_dim * (1.0 + LOG_2PI))

    def entropy_tensor(self, leaf: Tensor) -> Tensor:
        log_std = leaf[self.arch.n_params:].clip(LOG_STD_MIN, LOG_STD_MAX)
        return log_std.sum() + 0.5 * self.action_dim * (1.0 + LOG_2PI)

    def clamp_log_std(self) -> None:
        """Project stored log-std entries back into their bounds (post-update)."""
        self.flat[self.arch.n_params:] = np.clip(
            self.flat[self.arch.n_params:], LOG_STD_MIN, LOG_STD_MAX
        )


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdamState:
    """Adam moments and hyperparameters; value-semantic (never mutated)."""

    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float


def adam_init(n_params: int, lr: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=np.zeros(n_params), v=np.zeros(n_params), step=0,
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(state: AdamState, params: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns (new params, new state)."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != params.shape or g.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {g.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("adam_step: non-finite gradient")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=t)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _fmt_vec(v: np.ndarray) -> str:
    return ",".join(format(x, ".17g") for x in v)


def save_checkpoint(path, policy: GaussianPolicy, value: MlpParams) -> None:
    """Write policy + value parameters as decimal text (exact round-trip)."""
    lines = [
        "policy_dims=" + ",".join(str(d) for d in policy.arch.dims),
        f"log_std_clamp={format(LOG_STD_MIN, '.17g')},{format(LOG_STD_MAX, '.17g')}",
        "value_dims=" + ",".join(str(d) for d in value.arch.dims),
        "policy=" + _fmt_vec(policy.flat),
        "value=" + _fmt_vec(value.flat),
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[GaussianPolicy, MlpParams]:
    fields = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh.read().splitlines():
            if not line:
                continue
            key, _, value = line.partition("=")
            fields[key] = value
    try:
        policy_arch = MlpArch(tuple(int(d) for d in fields["policy_dims"].split(",")))
        value_arch = MlpArch(tuple(int(d) for d in fields["value_dims"].split(",")))
        policy_flat = np.array([float(x) for x in fields["policy"].split(",")])
        value_flat = np.array([float(x) for x in fields["value"].split(",")])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed checkpoint {path}: {exc}") from exc
    return GaussianPolicy(policy_arch, policy_flat), MlpParams(value_arch, value_flat)
