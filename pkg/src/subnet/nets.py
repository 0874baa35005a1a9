"""Feedforward networks with linear input/output layers and optional bypass.

A network is described by an immutable `MlpSpec`; its parameters live in a
single flat float64 vector (`MlpParams`) with a fixed per-layer layout:
weights then bias for each layer, then the bypass matrix when enabled.
The same layout is used both for the plain numpy forward pass and for the
autodiff graph builder, so the two evaluate the identical function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import GraphError

ACTIVATIONS = ("tanh", "relu", "sigmoid")

_ACT_NP = {
    "tanh": np.tanh,
    "relu": lambda v: np.maximum(v, 0.0),
    "sigmoid": lambda v: 1.0 / (1.0 + np.exp(-v)),
}


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    out_dim: int
    hidden_layers: int = 2
    hidden_width: int = 64
    activation: str = "tanh"
    bypass: bool = True

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("in_dim and out_dim must be >= 1")
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be >= 0")
        if self.hidden_layers >= 1 and self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1 when hidden layers exist")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def layer_dims(self):
        """Fan-in/fan-out pairs for all linear layers (hidden + output)."""
        dims = [self.in_dim] + [self.hidden_width] * self.hidden_layers + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))

    def layout(self):
        """[(key, offset, shape)] for every parameter block in the flat vector."""
        out = []
        offset = 0
        for i, (fan_in, fan_out) in enumerate(self.layer_dims()):
            out.append((f"w{i}", offset, (fan_out, fan_in)))
            offset += fan_out * fan_in
            out.append((f"b{i}", offset, (fan_out,)))
            offset += fan_out
        if self.bypass:
            out.append(("bypass", offset, (self.out_dim, self.in_dim)))
            offset += self.out_dim * self.in_dim
        return out

    @property
    def param_count(self):
        total = sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_dims())
        if self.bypass:
            total += self.in_dim * self.out_dim
        return total

    def to_dict(self):
        return {
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "hidden_layers": self.hidden_layers,
            "hidden_width": self.hidden_width,
            "activation": self.activation,
            "bypass": self.bypass,
        }


class MlpParams:
    """Flat parameter storage for one `MlpSpec`; `flat` may be a shared view."""

    def __init__(self, spec: MlpSpec, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.param_count,):
            raise ValueError(
                f"flat length {flat.shape} != spec parameter count ({spec.param_count},)"
            )
        self.spec = spec
        self.flat = flat
        self._layout = {key: (off, shape) for key, off, shape in spec.layout()}

    def view(self, key):
        off, shape = self._layout[key]
        return self.flat[off : off + int(np.prod(shape))].reshape(shape)

    def copy(self):
        return MlpParams(self.spec, self.flat.copy())


def xavier_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_xavier(spec: MlpSpec, rng) -> MlpParams:
    """Glorot-uniform weights, zero biases; `rng` is a seed or Generator."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    flat = np.zeros(spec.param_count)
    params = MlpParams(spec, flat)
    for key, _off, shape in spec.layout():
        if key.startswith("w") or key == "bypass":
            fan_out, fan_in = shape
            bound = xavier_bound(fan_in, fan_out)
            params.view(key)[:] = rng.uniform(-bound, bound, size=shape)
        # biases stay zero
    return params


def mlp_forward(spec: MlpSpec, params: MlpParams, x):
    """Plain numpy forward pass; accepts (in,) or batched (B, in) input."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != spec.in_dim:
        raise ValueError(f"input width {x.shape[1]} != in_dim {spec.in_dim}")
    act = _ACT_NP[spec.activation]
    n_layers = spec.hidden_layers + 1
    z = x
    for i in range(n_layers):
        z = z @ params.view(f"w{i}").T + params.view(f"b{i}")
        if i < n_layers - 1:
            z = act(z)
    if spec.bypass:
        z = z + x @ params.view("bypass").T
    return z[0] if single else z


def mlp_graph(tape, spec: MlpSpec, param_node, x_node):
    """Build the forward pass on `tape`; `param_node` is the flat vector node."""
    if x_node.value.ndim != 2 or x_node.value.shape[1] != spec.in_dim:
        raise GraphError(
            f"mlp_graph expects (B, {spec.in_dim}) input, got {x_node.value.shape}"
        )
    layout = {key: (off, shape) for key, off, shape in spec.layout()}

    def block(key):
        off, shape = layout[key]
        sl = tape.slice(param_node, off, off + int(np.prod(shape)), axis=0)
        return sl if len(shape) == 1 else tape.reshape(sl, shape)

    act = getattr(tape, spec.activation)
    n_layers = spec.hidden_layers + 1
    z = x_node
    for i in range(n_layers):
        z = tape.affine(z, block(f"w{i}"), block(f"b{i}"))
        if i < n_layers - 1:
            z = act(z)
    if spec.bypass:
        zero_bias = tape.constant(np.zeros(spec.out_dim))
        z = tape.add(z, tape.affine(x_node, block("bypass"), zero_bias))
    return z
