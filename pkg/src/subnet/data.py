"""Datasets: synthetic two-state benchmark system, CSV IO, splits.

The synthetic system is a two-state nonlinear map with cross-coupled
saturating terms, driven by i.i.d. uniform input and Gaussian measurement
noise on the first state. Process-noise variants inject the same noise
sample into the state update, either linearly (K * e) or multiplied by the
state (K * x * e). All generation is deterministic given the seed (numpy
PCG64 generator, reproducible across platforms).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

SIM_VARIANTS = ("base", "linear-process-noise", "nonlinear-process-noise")

# process-noise direction, scaled to unit norm and sigma_k
K0 = np.array([1.0, -0.9])


class CsvFormatError(ValueError):
    """Raised for malformed dataset CSV files; message carries line numbers."""


class InstabilityError(RuntimeError):
    def __init__(self, msg, step):
        super().__init__(msg)
        self.step = step


@dataclass
class IoDataset:
    u: np.ndarray  # (N, n_u)
    y: np.ndarray  # (N, n_y)
    name: str = ""

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.u.ndim != 2 or self.y.ndim != 2:
            raise ValueError("u and y must be 1-D or (N, channels) arrays")
        if self.u.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"u and y row counts differ: {self.u.shape[0]} vs {self.y.shape[0]}"
            )
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite values")

    def __len__(self):
        return self.u.shape[0]

    @property
    def n_u(self):
        return self.u.shape[1]

    @property
    def n_y(self):
        return self.y.shape[1]


@dataclass
class SimSystemConfig:
    variant: str = "base"
    sigma_k: float = 0.0
    sigma_e: float = 0.0
    input_range: tuple[float, float] = (-2.0, 2.0)
    n_samples: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.variant not in SIM_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.sigma_k < 0 or self.sigma_e < 0:
            raise ValueError("noise scales must be >= 0")
        a, b = self.input_range
        if not b > a:
            raise ValueError("input range must satisfy b > a")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    @property
    def gain(self):
        return self.sigma_k * K0 / np.linalg.norm(K0)


def sim_system_step(x, u, e=0.0, variant="base", gain=None):
    """One state update of the synthetic system (noise-free when e=0)."""
    x1, x2 = x
    nx1 = x1 / (1.2 + x2 * x2) + 0.4 * x2
    nx2 = x2 / (1.2 + x1 * x1) + 0.4 * x1 + u
    if variant == "linear-process-noise":
        nx1 += gain[0] * e
        nx2 += gain[1] * e
    elif variant == "nonlinear-process-noise":
        nx1 += gain[0] * x1 * e
        nx2 += gain[1] * x2 * e
    return np.array([nx1, nx2])


def generate_sim_system(config: SimSystemConfig) -> IoDataset:
    """Simulate from x0 = 0 with u ~ U(a, b) and e ~ N(0, sigma_e^2) i.i.d."""
    rng = np.random.default_rng(config.seed)
    a, b = config.input_range
    u = rng.uniform(a, b, size=config.n_samples)
    e = (
        rng.normal(0.0, config.sigma_e, size=config.n_samples)
        if config.sigma_e > 0
        else np.zeros(config.n_samples)
    )
    gain = config.gain
    x = np.zeros(2)
    y = np.empty(config.n_samples)
    for k in range(config.n_samples):
        y[k] = x[0] + e[k]
        x = sim_system_step(x, u[k], e[k], config.variant, gain)
        if np.max(np.abs(x)) > 1e6:
            raise InstabilityError(f"state diverged at step {k}", step=k)
    return IoDataset(u[:, None], y[:, None], name=f"sim-{config.variant}")


# 20 dB output SNR for the synthetic system (checked empirically in tests)
SIGMA_E_20DB = 0.082

BENCHMARK_SPLIT_SIZES = (10_000, 3_000, 10_000)


def benchmark_splits(seed=0, variant="base", sigma_k=0.0, sigma_e=SIGMA_E_20DB):
    """Train/validation/test records with independent input and noise draws.

    Train and validation carry measurement noise; the test record is
    noise-free so simulation error measures model quality only. For the
    process-noise variants the (state) noise is likewise absent from the
    test record.
    """
    sizes = BENCHMARK_SPLIT_SIZES
    names = ("train", "val", "test")
    out = []
    for i, (n_samples, name) in enumerate(zip(sizes, names)):
        cfg = SimSystemConfig(
            variant=variant if name != "test" else "base",
            sigma_k=sigma_k if name != "test" else 0.0,
            sigma_e=sigma_e if name != "test" else 0.0,
            n_samples=n_samples,
            seed=[int(seed) & 0x7FFFFFFF, i],  # distinct reproducible child seeds
        )
        ds = generate_sim_system(cfg)
        ds.name = name
        out.append(ds)
    return tuple(out)


def save_csv(dataset: IoDataset, path):
    header = [f"u{i + 1}" for i in range(dataset.n_u)] + [
        f"y{i + 1}" for i in range(dataset.n_y)
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row_u, row_y in zip(dataset.u, dataset.y):
            writer.writerow([f"{v:.17g}" for v in row_u] + [f"{v:.17g}" for v in row_y])


def load_csv(path, n_u, n_y) -> IoDataset:
    expected = [f"u{i + 1}" for i in range(n_u)] + [f"y{i + 1}" for i in range(n_y)]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header != expected:
            missing = [c for c in expected if c not in header]
            raise CsvFormatError(
                f"{path}: header mismatch, expected {expected}, got {header}"
                + (f" (missing {missing})" if missing else "")
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {len(expected)} cells, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    arr = np.array(rows)
    return IoDataset(arr[:, :n_u], arr[:, n_u:])


def slice_splits(dataset: IoDataset, train_len, val_len, test_len):
    """Contiguous, non-overlapping, in-order train/val/test slices."""
    total = train_len + val_len + test_len
    if total > len(dataset):
        raise ValueError(
            f"split lengths sum to {total} > dataset length {len(dataset)}"
        )
    if total < len(dataset):
        warnings.warn(
            f"dropping {len(dataset) - total} trailing samples", stacklevel=2
        )
    bounds = np.cumsum([0, train_len, val_len, test_len])
    names = ("train", "val", "test")
    return tuple(
        IoDataset(dataset.u[a:b], dataset.y[a:b], name=name)
        for a, b, name in zip(bounds[:-1], bounds[1:], names)
    )
