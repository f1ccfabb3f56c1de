"""Dense generator networks with a small reverse-mode gradient tape.

Batches are ``(batch, width)`` float64 arrays.  A layer computes
``act(x @ W.T + b)`` with ``W`` of shape ``(out_dim, in_dim)``.

Evaluation goes through an *ops* object: :class:`NumpyOps` computes plain
arrays, :class:`GradTape` computes the same values while recording what is
needed to differentiate a scalar loss with respect to every watched parameter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REGIMES = ("linear", "affine", "nonlinear")
ACTIVATIONS = ("identity", "tanh")


# ---------------------------------------------------------------------------
# evaluation back ends


class NumpyOps:
    """Forward-only evaluation on raw arrays."""

    def param(self, array):
        return array

    def constant(self, array):
        return np.asarray(array, dtype=np.float64)

    def value(self, x):
        return x

    def linear(self, x, w, b=None):
        y = x @ w.T
        if b is not None:
            y = y + b
        return y

    def tanh(self, x):
        return np.tanh(x)

    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b

    def scale(self, a, c):
        return a * c

    def split_cols(self, x, at):
        return x[:, :at], x[:, at:]

    def concat_cols(self, a, b):
        return np.concatenate([a, b], axis=1)

    def reshape(self, x, shape):
        return x.reshape(shape)

    def swap_last(self, x):
        # (m, a, b) -> (m, b, a), made contiguous for the following reshape
        return np.ascontiguousarray(x.transpose(0, 2, 1))

    def mean_sq(self, x):
        """Mean over rows of the squared row norm."""
        return float(np.einsum("ij,ij->", x, x)) / x.shape[0]

    def weighted_sum(self, terms, weights):
        return float(sum(w * t for t, w in zip(terms, weights)))


class Var:
    __slots__ = ("value", "index")

    def __init__(self, value, index):
        self.value = value
        self.index = index

    @property
    def shape(self):
        return self.value.shape


class TapeConsumedError(RuntimeError):
    pass


class GradTape(NumpyOps):
    """Records operations in execution order; :meth:`backward` replays them in reverse.

    A tape is single use: calling :meth:`backward` twice raises
    :class:`TapeConsumedError`.
    """

    def __init__(self):
        self._values = []
        self._needs = []  # whether gradient must flow into the node
        self._backs = []  # per node: None for leaves, else fn(grad) -> [(parent_index, grad)]
        self._watched = {}  # id(array) -> node index
        self._arrays = {}
        self._consumed = False

    def _node(self, value, back, needs=True):
        self._values.append(value)
        self._backs.append(back)
        self._needs.append(needs)
        return Var(value, len(self._values) - 1)

    def _any(self, *vs):
        return any(self._needs[v.index] for v in vs)

    def param(self, array):
        key = id(array)
        if key not in self._watched:
            v = self._node(array, None)
            self._watched[key] = v.index
            self._arrays[key] = array
            return v
        idx = self._watched[key]
        return Var(self._values[idx], idx)

    def constant(self, array):
        return self._node(np.asarray(array, dtype=np.float64), None, needs=False)

    def value(self, x):
        return x.value

    def linear(self, x, w, b=None):
        xv, wv = x.value, w.value
        y = xv @ wv.T
        if b is not None:
            y = y + b.value
        xi, wi = x.index, w.index
        bi = None if b is None else b.index
        x_needs = self._needs[xi]

        def back(g):
            out = [(wi, g.T @ xv)]
            if x_needs:
                out.append((xi, g @ wv))
            if bi is not None:
                out.append((bi, g.sum(axis=0)))
            return out

        return self._node(y, back)

    def tanh(self, x):
        y = np.tanh(x.value)
        xi = x.index
        return self._node(y, lambda g: [(xi, g * (1.0 - y * y))], self._any(x))

    def add(self, a, b):
        ai, bi = a.index, b.index
        return self._node(a.value + b.value, lambda g: [(ai, g), (bi, g)], self._any(a, b))

    def sub(self, a, b):
        ai, bi = a.index, b.index
        return self._node(a.value - b.value, lambda g: [(ai, g), (bi, -g)], self._any(a, b))

    def scale(self, a, c):
        ai = a.index
        return self._node(a.value * c, lambda g: [(ai, g * c)], self._any(a))

    def split_cols(self, x, at):
        xv, xi = x.value, x.index
        width = xv.shape[1]
        needs = self._any(x)

        def make(lo, hi):
            def back(g):
                full = np.zeros_like(xv)
                full[:, lo:hi] = g
                return [(xi, full)]

            return self._node(xv[:, lo:hi], back, needs)

        return make(0, at), make(at, width)

    def concat_cols(self, a, b):
        ai, bi = a.index, b.index
        k = a.value.shape[1]
        y = np.concatenate([a.value, b.value], axis=1)
        return self._node(y, lambda g: [(ai, g[:, :k]), (bi, g[:, k:])], self._any(a, b))

    def reshape(self, x, shape):
        xi, old = x.index, x.value.shape
        return self._node(x.value.reshape(shape), lambda g: [(xi, g.reshape(old))], self._any(x))

    def swap_last(self, x):
        xi = x.index
        y = np.ascontiguousarray(x.value.transpose(0, 2, 1))
        return self._node(y, lambda g: [(xi, g.transpose(0, 2, 1))], self._any(x))

    def mean_sq(self, x):
        xv, xi = x.value, x.index
        m = xv.shape[0]
        val = np.array(np.einsum("ij,ij->", xv, xv) / m)
        return self._node(val, lambda g: [(xi, (2.0 * float(g) / m) * xv)], self._any(x))

    def weighted_sum(self, terms, weights):
        idx = [t.index for t in terms]
        val = np.array(sum(float(w) * float(t.value) for t, w in zip(terms, weights)))
        ws = [float(w) for w in weights]
        needs = any(self._needs[i] for i in idx)
        return self._node(val, lambda g: [(i, g * w) for i, w in zip(idx, ws)], needs)

    def backward(self, loss: Var, seed: float = 1.0):
        """Return ``{id(param_array): gradient}`` for every watched array."""
        if self._consumed:
            raise TapeConsumedError("gradient tape already consumed")
        self._consumed = True
        grads: list = [None] * len(self._values)
        grads[loss.index] = np.asarray(seed, dtype=np.float64) * np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            back = self._backs[i]
            if g is None or back is None or not self._needs[i]:
                continue
            for j, gj in back(g):
                if grads[j] is None:
                    grads[j] = gj
                else:
                    grads[j] = grads[j] + gj
        out = {}
        for key, idx in self._watched.items():
            g = grads[idx]
            out[key] = np.zeros_like(self._arrays[key]) if g is None else g
        self._values = self._backs = self._needs = None
        return out


# ---------------------------------------------------------------------------
# networks


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "identity"
    use_bias: bool = False

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def block_width(blocks: int, block_dim: int, monoidal: str = "cartesian") -> int:
    """Coordinate width of ``blocks`` strands: a sum of copies or a tensor power."""
    if monoidal == "tensor":
        return block_dim**blocks
    return blocks * block_dim


def default_architecture(in_width: int, out_width: int | None = None) -> list[int]:
    """Width chain ``[N, 2N+2, 2N+2, 100, 50, M]`` (``M`` defaults to ``N``)."""
    if in_width < 1:
        raise ValueError("width must be positive")
    out_width = in_width if out_width is None else out_width
    return [in_width, 2 * in_width + 2, 2 * in_width + 2, 100, 50, out_width]


def layers_for(widths, regime: str) -> list[LayerSpec]:
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    out = []
    last = len(widths) - 2
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        act = "tanh" if regime == "nonlinear" and i < last else "identity"
        out.append(LayerSpec(a, b, act, use_bias=regime == "affine"))
    return out


def init_params(layers, rng_seed) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Fan-scaled uniform weights in ``[-a, a]``, ``a = sqrt(6 / (fan_in + fan_out))``; zero biases.

    ``rng_seed`` may be an int or a :class:`numpy.random.Generator`.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    params = []
    for spec in layers:
        a = math.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        w = rng.uniform(-a, a, size=(spec.out_dim, spec.in_dim))
        b = np.zeros(spec.out_dim) if spec.use_bias else None
        params.append((w, b))
    return params


@dataclass
class GeneratorNet:
    name: str
    block_dim: int
    in_blocks: int
    out_blocks: int
    layers: list[LayerSpec]
    params: list = field(default_factory=list)
    regime: str = "linear"
    monoidal: str = "cartesian"

    def __post_init__(self):
        self.check()

    @property
    def in_width(self):
        return block_width(self.in_blocks, self.block_dim, self.monoidal)

    @property
    def out_width(self):
        return block_width(self.out_blocks, self.block_dim, self.monoidal)

    def check(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        if self.layers[0].in_dim != self.in_width or self.layers[-1].out_dim != self.out_width:
            raise ValueError(
                f"net {self.name}: layer chain {self.layers[0].in_dim}->{self.layers[-1].out_dim} "
                f"does not match block widths {self.in_width}->{self.out_width}"
            )
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"net {self.name}: broken layer chain {a.out_dim} != {b.in_dim}")
        for i, spec in enumerate(self.layers):
            last = i == len(self.layers) - 1
            if self.regime == "linear" and (spec.activation != "identity" or spec.use_bias):
                raise ValueError("linear regime allows identity activations without bias only")
            if self.regime == "affine" and (spec.activation != "identity" or not spec.use_bias):
                raise ValueError("affine regime needs identity activations with bias")
            if self.regime == "nonlinear":
                want = "identity" if last else "tanh"
                if spec.activation != want or spec.use_bias:
                    raise ValueError("nonlinear regime: tanh hidden layers, identity output, no bias")
        if self.params:
            if len(self.params) != len(self.layers):
                raise ValueError("parameter list does not match layers")
            for spec, (w, b) in zip(self.layers, self.params):
                if w.shape != (spec.out_dim, spec.in_dim):
                    raise ValueError(f"weight shape {w.shape} != {(spec.out_dim, spec.in_dim)}")
                if (b is None) == spec.use_bias:
                    raise ValueError("bias presence does not match layer spec")
                if not np.all(np.isfinite(w)) or (b is not None and not np.all(np.isfinite(b))):
                    raise ValueError("non-finite parameter")

    def arrays(self):
        """Every parameter array, weights and biases, in a fixed order."""
        out = []
        for w, b in self.params:
            out.append(w)
            if b is not None:
                out.append(b)
        return out

    def forward(self, x, ops=None):
        ops = ops or NumpyOps()
        width = ops.value(x).shape[1]
        if width != self.in_width:
            raise ValueError(f"net {self.name}: input width {width} != {self.in_width}")
        for spec, (w, b) in zip(self.layers, self.params):
            x = ops.linear(x, ops.param(w), None if b is None else ops.param(b))
            if spec.activation == "tanh":
                x = ops.tanh(x)
        return x

    def copy(self):
        return GeneratorNet(
            self.name,
            self.block_dim,
            self.in_blocks,
            self.out_blocks,
            list(self.layers),
            [(w.copy(), None if b is None else b.copy()) for w, b in self.params],
            self.regime,
            self.monoidal,
        )

    # -- checkpoints --------------------------------------------------------

    def to_dict(self):
        return {
            "name": self.name,
            "regime": self.regime,
            "monoidal": self.monoidal,
            "block_dim": self.block_dim,
            "in_blocks": self.in_blocks,
            "out_blocks": self.out_blocks,
            "widths": [self.layers[0].in_dim] + [s.out_dim for s in self.layers],
            "params": [
                {"weight": w.tolist(), "bias": None if b is None else b.tolist()}
                for w, b in self.params
            ],
        }

    @classmethod
    def from_dict(cls, d):
        layers = layers_for(d["widths"], d["regime"])
        params = []
        for p in d["params"]:
            w = np.array(p["weight"], dtype=np.float64)
            b = None if p["bias"] is None else np.array(p["bias"], dtype=np.float64)
            params.append((w, b))
        return cls(
            d["name"],
            d["block_dim"],
            d["in_blocks"],
            d["out_blocks"],
            layers,
            params,
            d["regime"],
            d.get("monoidal", "cartesian"),
        )


def make_net(name, block_dim, arity, regime="linear", rng_seed=0, widths=None, monoidal="cartesian"):
    """Build and initialise a generator network with the default architecture."""
    in_w = block_width(arity[0], block_dim, monoidal)
    out_w = block_width(arity[1], block_dim, monoidal)
    if widths is None:
        widths = default_architecture(in_w, out_w)
    layers = layers_for(widths, regime)
    return GeneratorNet(
        name, block_dim, arity[0], arity[1], layers, init_params(layers, rng_seed), regime, monoidal
    )


def save_checkpoint(nets: dict, path):
    """Write nets as JSON.  Python float reprs round-trip bit-exactly."""
    doc = {"nets": [nets[k].to_dict() for k in sorted(nets)]}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    return {d["name"]: GeneratorNet.from_dict(d) for d in doc["nets"]}
