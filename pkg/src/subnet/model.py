"""State-space encoder model: encoder, state transition, output map.

The model is the triple (f, h, psi):

  x[t|t]     = psi(u[t-n_b .. t-1], y[t-n_a .. t])        (encoder)
  y_hat[k]   = h(x[k])
  e_hat[k]   = y[k] - y_hat[k]                             (innovation)
  x[k+1]     = f(x[k], u[k], e_hat[k])                     (per noise structure)

Noise structures: "output-error" ignores the innovation, "linear-innovation"
adds K @ e_hat to the state update, "general-innovation" feeds e_hat through
the state-transition network itself.

All internal computation happens on normalized signals; `simulate` and
`kstep_predictions` accept raw-unit datasets and handle (de)normalization.
Encoder input ordering is fixed: u block first, then y block, both oldest
to newest (this convention is part of the checkpoint format).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError
from .nets import MlpParams, MlpSpec, init_xavier, mlp_forward

NOISE_STRUCTURES = ("output-error", "linear-innovation", "general-innovation")

CHECKPOINT_MAGIC = b"SSENC\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(IOError):
    """Raised for unreadable, corrupt, or wrong-version model files."""


@dataclass
class NoiseStructure:
    tag: str = "output-error"
    gain: np.ndarray | None = None  # (n_x, n_y), linear-innovation only

    def __post_init__(self):
        if self.tag not in NOISE_STRUCTURES:
            raise ValueError(f"unknown noise structure {self.tag!r}")
        if (self.gain is not None) != (self.tag == "linear-innovation"):
            raise ValueError("gain matrix present iff tag is linear-innovation")
        if self.gain is not None:
            self.gain = np.asarray(self.gain, dtype=np.float64)


@dataclass
class Normalization:
    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def __post_init__(self):
        for name in ("u_mean", "u_std", "y_mean", "y_std"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.u_std <= 0) or np.any(self.y_std <= 0):
            raise ValueError("normalization stds must be positive")

    @classmethod
    def identity(cls, n_u, n_y):
        return cls(np.zeros(n_u), np.ones(n_u), np.zeros(n_y), np.ones(n_y))

    def norm_u(self, u):
        return (np.asarray(u, dtype=np.float64) - self.u_mean) / self.u_std

    def norm_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def denorm_y(self, y):
        return np.asarray(y, dtype=np.float64) * self.y_std + self.y_mean


@dataclass
class Window:
    """One training subsection: encoder slices plus a length-T rollout."""

    start: int
    u_enc: np.ndarray  # (n_b, n_u)
    y_enc: np.ndarray  # (n_a+1, n_y)
    u_roll: np.ndarray  # (T, n_u)
    y_roll: np.ndarray  # (T, n_y)

    @classmethod
    def from_arrays(cls, u, y, start, horizon, n_a, n_b):
        if start < max(n_a, n_b) or start + horizon > len(u):
            raise ValueError(
                f"window start {start} with T={horizon} out of range for N={len(u)}"
            )
        return cls(
            start=start,
            u_enc=u[start - n_b : start],
            y_enc=y[start - n_a : start + 1],
            u_roll=u[start : start + horizon],
            y_roll=y[start : start + horizon],
        )


@dataclass
class SimResult:
    y_sim: np.ndarray  # (N, n_y) in original units; first `skip` rows are NaN
    skip: int


@dataclass
class SubnetModel:
    n_x: int
    n_u: int
    n_y: int
    n_a: int
    n_b: int
    f_spec: MlpSpec
    h_spec: MlpSpec
    psi_spec: MlpSpec
    f_params: MlpParams
    h_params: MlpParams
    psi_params: MlpParams
    noise: NoiseStructure = field(default_factory=NoiseStructure)
    norm: Normalization | None = None

    def __post_init__(self):
        if self.norm is None:
            self.norm = Normalization.identity(self.n_u, self.n_y)
        f_in = self.n_x + self.n_u
        if self.noise.tag == "general-innovation":
            f_in += self.n_y
        expect = {
            "f": (self.f_spec.in_dim, f_in, self.f_spec.out_dim, self.n_x),
            "h": (self.h_spec.in_dim, self.n_x, self.h_spec.out_dim, self.n_y),
            "psi": (
                self.psi_spec.in_dim,
                self.encoder_in_dim,
                self.psi_spec.out_dim,
                self.n_x,
            ),
        }
        for name, (got_in, want_in, got_out, want_out) in expect.items():
            if got_in != want_in or got_out != want_out:
                raise ValueError(
                    f"{name} net dims ({got_in}->{got_out}) inconsistent with model "
                    f"(expected {want_in}->{want_out})"
                )
        if self.noise.gain is not None and self.noise.gain.shape != (self.n_x, self.n_y):
            raise ValueError("innovation gain must be (n_x, n_y)")

    # -- basic structure ----------------------------------------------------

    @property
    def lag(self):
        """Samples consumed by the encoder before the first prediction."""
        return max(self.n_a, self.n_b)

    @property
    def encoder_in_dim(self):
        return self.n_b * self.n_u + (self.n_a + 1) * self.n_y

    def param_blocks(self):
        """Trainable parameter blocks as {name: flat array}; views, not copies."""
        blocks = {
            "f": self.f_params.flat,
            "h": self.h_params.flat,
            "psi": self.psi_params.flat,
        }
        if self.noise.tag == "linear-innovation":
            blocks["K"] = self.noise.gain.reshape(-1)
        return blocks

    def set_param_blocks(self, blocks):
        for name, flat in self.param_blocks().items():
            flat[:] = blocks[name]

    def copy(self):
        gain = None if self.noise.gain is None else self.noise.gain.copy()
        return SubnetModel(
            self.n_x, self.n_u, self.n_y, self.n_a, self.n_b,
            self.f_spec, self.h_spec, self.psi_spec,
            self.f_params.copy(), self.h_params.copy(), self.psi_params.copy(),
            NoiseStructure(self.noise.tag, gain),
            Normalization(
                self.norm.u_mean.copy(), self.norm.u_std.copy(),
                self.norm.y_mean.copy(), self.norm.y_std.copy(),
            ),
        )

    # -- forward computation (normalized signals) ----------------------------

    def encode(self, u_window, y_window):
        """Initial state from normalized windows; supports a leading batch axis."""
        u_window = np.asarray(u_window, dtype=np.float64)
        y_window = np.asarray(y_window, dtype=np.float64)
        single = u_window.ndim == 2
        if single:
            u_window = u_window[None]
            y_window = y_window[None]
        if u_window.shape[1:] != (self.n_b, self.n_u):
            raise ValueError(
                f"encoder u window must be (n_b={self.n_b}, n_u={self.n_u}), "
                f"got {u_window.shape[1:]}"
            )
        if y_window.shape[1:] != (self.n_a + 1, self.n_y):
            raise ValueError(
                f"encoder y window must be (n_a+1={self.n_a + 1}, n_y={self.n_y}), "
                f"got {y_window.shape[1:]}"
            )
        b = u_window.shape[0]
        z = np.concatenate(
            [u_window.reshape(b, -1), y_window.reshape(b, -1)], axis=1
        )
        x0 = mlp_forward(self.psi_spec, self.psi_params, z)
        return x0[0] if single else x0

    def step(self, x, u, e):
        """One normalized state update; all arguments batched (B, dim)."""
        if self.noise.tag == "general-innovation":
            return mlp_forward(
                self.f_spec, self.f_params, np.concatenate([x, u, e], axis=1)
            )
        x_next = mlp_forward(self.f_spec, self.f_params, np.concatenate([x, u], axis=1))
        if self.noise.tag == "linear-innovation":
            x_next = x_next + e @ self.noise.gain.T
        return x_next

    def rollout_batch(self, x0, u_roll, y_roll=None, teacher_forced=True):
        """Roll the model forward from x0 (B, n_x) over u_roll (B, T, n_u).

        Innovations are y - y_hat when teacher_forced (requires y_roll) and
        zero otherwise (the innovation's conditional expectation).
        Returns (y_hat (B,T,n_y), x_hat (B,T,n_x), e_hat (B,T,n_y)).
        """
        b, horizon = u_roll.shape[:2]
        y_hat = np.empty((b, horizon, self.n_y))
        x_hat = np.empty((b, horizon, self.n_x))
        e_hat = np.zeros((b, horizon, self.n_y))
        x = x0
        for k in range(horizon):
            x_hat[:, k] = x
            yk = mlp_forward(self.h_spec, self.h_params, x)
            y_hat[:, k] = yk
            if teacher_forced:
                e_hat[:, k] = y_roll[:, k] - yk
            if not np.all(np.isfinite(yk)):
                raise NumericError(f"non-finite prediction at step {k}", index=k)
            if k + 1 < horizon:
                x = self.step(x, u_roll[:, k], e_hat[:, k])
        return y_hat, x_hat, e_hat

    def rollout(self, window: Window):
        """Predicted outputs/states/innovations over one normalized window."""
        x0 = self.encode(window.u_enc, window.y_enc)
        y_hat, x_hat, e_hat = self.rollout_batch(
            x0[None], window.u_roll[None], window.y_roll[None], teacher_forced=True
        )
        return y_hat[0], x_hat[0], e_hat[0]

    # -- evaluation on raw-unit datasets -------------------------------------

    def _check_channels(self, dataset):
        if dataset.n_u != self.n_u or dataset.n_y != self.n_y:
            raise ValueError(
                f"dataset channels (n_u={dataset.n_u}, n_y={dataset.n_y}) do not "
                f"match model (n_u={self.n_u}, n_y={self.n_y})"
            )

    def initial_state(self, u_n, y_n, init="encoder"):
        n = self.lag
        if init == "zero":
            return np.zeros(self.n_x)
        return self.encode(u_n[n - self.n_b : n], y_n[n - self.n_a : n + 1])

    def simulate(self, dataset, mode="free-run", init="encoder"):
        """Simulate the full record; output in original units.

        The first `lag` samples feed the encoder and are returned as NaN;
        they must be excluded from any error metric. "free-run" never reads
        measured outputs past the encoder window; "teacher-forced" computes
        the innovation from the measurement at every step.
        """
        if mode not in ("free-run", "teacher-forced"):
            raise ValueError(f"unknown simulation mode {mode!r}")
        self._check_channels(dataset)
        n = self.lag
        if len(dataset) <= n:
            raise ValueError(f"dataset length {len(dataset)} <= encoder lag {n}")
        u = self.norm.norm_u(dataset.u)
        y = self.norm.norm_y(dataset.y)
        x = self.initial_state(u, y, init=init)[None]
        y_hat, _, _ = self.rollout_batch(
            x,
            u[None, n:],
            y[None, n:] if mode == "teacher-forced" else None,
            teacher_forced=(mode == "teacher-forced"),
        )
        y_sim = np.full((len(dataset), self.n_y), np.nan)
        y_sim[n:] = self.norm.denorm_y(y_hat[0])
        return SimResult(y_sim=y_sim, skip=n)

    def kstep_predictions(self, dataset, k_max, init="encoder"):
        """Teacher-forced k-step predictions for every valid start.

        Returns (t_indices, preds) with preds[i, k] the prediction of
        y[t_indices[i] + k] made from data up to t_indices[i] (original units).
        """
        if k_max < 0:
            raise ValueError("k_max must be >= 0")
        self._check_channels(dataset)
        n = self.lag
        n_samples = len(dataset)
        if n_samples - n - k_max < 1:
            raise ValueError(
                f"dataset too short for k_max={k_max} with encoder lag {n}"
            )
        u = self.norm.norm_u(dataset.u)
        y = self.norm.norm_y(dataset.y)
        t_idx = np.arange(n, n_samples - k_max)
        if init == "zero":
            x0 = np.zeros((len(t_idx), self.n_x))
        else:
            u_enc = np.stack([u[t - self.n_b : t] for t in t_idx])
            y_enc = np.stack([y[t - self.n_a : t + 1] for t in t_idx])
            x0 = self.encode(u_enc, y_enc)
        offs = np.arange(k_max + 1)
        u_roll = u[t_idx[:, None] + offs]
        y_roll = y[t_idx[:, None] + offs]
        y_hat, _, _ = self.rollout_batch(x0, u_roll, y_roll, teacher_forced=True)
        return t_idx, self.norm.denorm_y(y_hat)


def build_model(
    n_x,
    n_u,
    n_y,
    n_a,
    n_b,
    noise="output-error",
    hidden_layers=2,
    hidden_width=64,
    activation="tanh",
    bypass=True,
    seed=0,
    norm=None,
):
    """Construct a Xavier-initialized model (deterministic given seed)."""
    f_in = n_x + n_u + (n_y if noise == "general-innovation" else 0)
    enc_in = n_b * n_u + (n_a + 1) * n_y
    kwargs = dict(
        hidden_layers=hidden_layers,
        hidden_width=hidden_width,
        activation=activation,
        bypass=bypass,
    )
    f_spec = MlpSpec(f_in, n_x, **kwargs)
    h_spec = MlpSpec(n_x, n_y, **kwargs)
    psi_spec = MlpSpec(enc_in, n_x, **kwargs)
    rng = np.random.default_rng(seed)
    f_params = init_xavier(f_spec, rng)
    h_params = init_xavier(h_spec, rng)
    psi_params = init_xavier(psi_spec, rng)
    if noise == "general-innovation":
        # zero the e-hat input columns so the model starts as output-error;
        # random weights here close an e-hat feedback loop through h that is
        # unstable at init for some seeds (mirrors K = 0 below)
        f_params.view("w0")[:, -n_y:] = 0.0
        if f_spec.bypass:
            f_params.view("bypass")[:, -n_y:] = 0.0
    gain = np.zeros((n_x, n_y)) if noise == "linear-innovation" else None
    return SubnetModel(
        n_x, n_u, n_y, n_a, n_b,
        f_spec, h_spec, psi_spec,
        f_params, h_params, psi_params,
        NoiseStructure(noise, gain),
        norm,
    )


# -- checkpoint format -------------------------------------------------------
#
# magic (6B) | version (1B) | header length (4B LE) | JSON header | payload
# payload = concatenated little-endian float64 blocks in header["blocks"] order


def save_model(model: SubnetModel, path):
    header = {
        "n_x": model.n_x,
        "n_u": model.n_u,
        "n_y": model.n_y,
        "n_a": model.n_a,
        "n_b": model.n_b,
        "noise": model.noise.tag,
        "f_spec": model.f_spec.to_dict(),
        "h_spec": model.h_spec.to_dict(),
        "psi_spec": model.psi_spec.to_dict(),
        "norm": {
            "u_mean": model.norm.u_mean.tolist(),
            "u_std": model.norm.u_std.tolist(),
            "y_mean": model.norm.y_mean.tolist(),
            "y_std": model.norm.y_std.tolist(),
        },
        "blocks": [
            [name, int(flat.size)] for name, flat in model.param_blocks().items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blocks = model.param_blocks()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        for name, _size in header["blocks"]:
            fh.write(np.ascontiguousarray(blocks[name], dtype="<f8").tobytes())


def load_model(path) -> SubnetModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 5 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    version = raw[len(CHECKPOINT_MAGIC)]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    pos = len(CHECKPOINT_MAGIC) + 1
    header_len = int.from_bytes(raw[pos : pos + 4], "little")
    pos += 4
    if pos + header_len > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    pos += header_len
    expected = sum(size for _name, size in header["blocks"]) * 8
    if len(raw) - pos != expected:
        raise CheckpointError(
            f"{path}: payload size {len(raw) - pos} != expected {expected}"
        )
    values = {}
    for name, size in header["blocks"]:
        values[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).astype(
            np.float64
        )
        pos += size * 8
    norm = Normalization(**{k: np.array(v) for k, v in header["norm"].items()})
    f_spec = MlpSpec(**header["f_spec"])
    h_spec = MlpSpec(**header["h_spec"])
    psi_spec = MlpSpec(**header["psi_spec"])
    noise_tag = header["noise"]
    gain = (
        values["K"].reshape(header["n_x"], header["n_y"])
        if noise_tag == "linear-innovation"
        else None
    )
    return SubnetModel(
        header["n_x"], header["n_u"], header["n_y"], header["n_a"], header["n_b"],
        f_spec, h_spec, psi_spec,
        MlpParams(f_spec, values["f"]),
        MlpParams(h_spec, values["h"]),
        MlpParams(psi_spec, values["psi"]),
        NoiseStructure(noise_tag, gain),
        norm,
    )
