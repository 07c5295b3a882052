"""Parameter containers and the layers used by the predictor and generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor


class Parameter:
    """A named, trainable tensor with a gradient slot."""

    def __init__(self, name: str, data: np.ndarray, trainable: bool = True):
        self.name = name
        self.tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=trainable)
        self.trainable = trainable

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def freeze(self) -> None:
        self.trainable = False
        self.tensor.requires_grad = False

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.data.shape}, trainable={self.trainable})"


class ParamStore:
    """Flat name -> Parameter registry shared by models and checkpoints."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def new(self, name: str, data: np.ndarray, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(name, data, trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, p in self._params.items():
            if p.data.shape != state[k].shape:
                raise ValueError(f"shape mismatch for {k}: {p.data.shape} vs {state[k].shape}")
            p.data = state[k].copy()


def glorot_init(rng: Rng, shape) -> np.ndarray:
    """Fan-scaled uniform init. Flat +-0.08 starves deep paths (attention,
    bridge) of signal at desk-scale widths; fan scaling trains reliably."""
    fan_in = int(np.prod(shape[:-1]))
    fan_out = int(shape[-1])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def embedding_init(rng: Rng, shape) -> np.ndarray:
    return rng.uniform(-0.1, 0.1, shape)


@dataclass
class Linear:
    w: Parameter
    b: Parameter

    @staticmethod
    def create(store: ParamStore, name: str, d_in: int, d_out: int, rng: Rng) -> "Linear":
        return Linear(
            w=store.new(f"{name}.w", glorot_init(rng, (d_in, d_out))),
            b=store.new(f"{name}.b", np.zeros(d_out)),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w.tensor), self.b.tensor)


@dataclass
class GruLayer:
    """One GRU layer; gate columns are [reset | update | candidate].

    The candidate path applies the reset gate to the previous hidden state
    before the hidden-to-hidden matmul.
    """

    w: Parameter  # (d_in, 3H)
    u_rz: Parameter  # (H, 2H)
    u_n: Parameter  # (H, H)
    b: Parameter  # (3H,)
    hidden: int = field(default=0)

    @staticmethod
    def create(store: ParamStore, name: str, d_in: int, hidden: int, rng: Rng) -> "GruLayer":
        return GruLayer(
            w=store.new(f"{name}.w", glorot_init(rng, (d_in, 3 * hidden))),
            u_rz=store.new(f"{name}.u_rz", glorot_init(rng, (hidden, 2 * hidden))),
            u_n=store.new(f"{name}.u_n", glorot_init(rng, (hidden, hidden))),
            b=store.new(f"{name}.b", np.zeros(3 * hidden)),
            hidden=hidden,
        )

    def step(self, x_t: Tensor, h_prev: Tensor) -> Tensor:
        """x_t: (B, d_in), h_prev: (B, H) -> (B, H)."""
        H = self.hidden
        pre = T.add(T.matmul(x_t, self.w.tensor), self.b.tensor)  # (B, 3H)
        hg = T.matmul(h_prev, self.u_rz.tensor)  # (B, 2H)
        r = T.sigmoid(T.add(pre[:, :H], hg[:, :H]))
        z = T.sigmoid(T.add(pre[:, H : 2 * H], hg[:, H:]))
        n = T.tanh(T.add(pre[:, 2 * H :], T.matmul(T.mul(r, h_prev), self.u_n.tensor)))
        return T.add(T.mul(z, h_prev), T.mul(T.sub(1.0, z), n))


@dataclass
class GruStack:
    """Stacked GRU layers with inter-layer dropout at train time."""

    layers: list[GruLayer]
    dropout: float = 0.0

    @staticmethod
    def create(store: ParamStore, name: str, d_in: int, hidden: int, n_layers: int, rng: Rng, dropout: float = 0.0) -> "GruStack":
        layers = []
        for i in range(n_layers):
            layers.append(GruLayer.create(store, f"{name}.l{i}", d_in if i == 0 else hidden, hidden, rng))
        return GruStack(layers=layers, dropout=dropout)

    @property
    def hidden(self) -> int:
        return self.layers[0].hidden

    def init_state(self, batch: int) -> list[Tensor]:
        return [Tensor(np.zeros((batch, l.hidden))) for l in self.layers]

    def step(self, x_t: Tensor, states: list[Tensor], train: bool = False, rng: Rng | None = None,
             hold_mask: np.ndarray | None = None) -> tuple[Tensor, list[Tensor]]:
        """One time step through the stack.

        hold_mask (B, 1): where 0, the new state is discarded and the previous
        one carried through — used to stop padded positions from moving state.
        """
        new_states = []
        inp = x_t
        for i, layer in enumerate(self.layers):
            h = layer.step(inp, states[i])
            if hold_mask is not None:
                h = T.add(T.mul(h, hold_mask), T.mul(states[i], 1.0 - hold_mask))
            new_states.append(h)
            inp = h
            if train and self.dropout > 0.0 and i < len(self.layers) - 1:
                inp = T.dropout(inp, self.dropout, rng=rng, train=True)
        return inp, new_states
