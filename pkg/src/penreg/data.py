"""Datasets, simulated data generators, sample splitting, and penalty tying.

The two simulated data-generating processes are additive sinusoid models on
``[-2, 2]^J``: identical components ``sin(x)`` (variant "sim1") or components
``sin(x * b^(j - offset))`` with geometrically increasing frequency
(variant "sim2").  Noise is Gaussian with the standard deviation calibrated
to a requested signal-to-noise ratio.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

SIM_DOMAIN = (-2.0, 2.0)


@dataclass
class Dataset:
    """Covariates, responses, and (for simulated data) the noise-free truth.

    ``y = truth + noise`` holds exactly whenever both optional vectors are
    present.  ``domain_bounds`` gives the per-coordinate covariate range.
    """

    x: np.ndarray
    y: np.ndarray
    truth: np.ndarray | None = None
    noise: np.ndarray | None = None
    domain_bounds: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        n, j = self.x.shape
        if n == 0:
            raise ValueError("dataset must contain at least one row")
        if self.y.shape != (n,):
            raise ValueError(f"y has shape {self.y.shape}, expected ({n},)")
        for name in ("truth", "noise"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != (n,):
                    raise ValueError(f"{name} has shape {v.shape}, expected ({n},)")
                setattr(self, name, v)
        if not self.domain_bounds:
            self.domain_bounds = []
            for k in range(j):
                lo, hi = float(self.x[:, k].min()), float(self.x[:, k].max())
                if lo == hi:  # constant column; widen so lo < hi holds
                    lo, hi = lo - 0.5, hi + 0.5
                self.domain_bounds.append((lo, hi))
        if len(self.domain_bounds) != j:
            raise ValueError("domain_bounds length must match the number of covariates")
        for k, (lo, hi) in enumerate(self.domain_bounds):
            if not lo < hi:
                raise ValueError(f"domain bound {k}: need lo < hi, got ({lo}, {hi})")
            col = self.x[:, k]
            if col.min() < lo or col.max() > hi:
                raise ValueError(f"covariate {k} falls outside its declared bounds")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        """Row subset sharing the parent's domain bounds."""
        idx = np.asarray(idx)
        return Dataset(
            x=self.x[idx],
            y=self.y[idx],
            truth=None if self.truth is None else self.truth[idx],
            noise=None if self.noise is None else self.noise[idx],
            domain_bounds=list(self.domain_bounds),
        )


@dataclass
class SimSpec:
    """Configuration of the sinusoid simulation DGPs."""

    variant: str  # "sim1" or "sim2"
    n: int
    J: int = 8
    snr: float = 2.0
    freq_base: float = 1.2
    freq_offset: int = 4
    sigma_mode: str = "empirical"  # or "analytic"

    def __post_init__(self) -> None:
        if self.variant not in ("sim1", "sim2"):
            raise ValueError(f"unknown simulation variant {self.variant!r}")
        if self.sigma_mode not in ("empirical", "analytic"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.J < 1:
            raise ValueError("J must be at least 1")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not self.snr > 0:
            raise ValueError("snr must be positive")

    def frequency(self, j: int) -> float:
        """Angular frequency of component ``j`` (0-based)."""
        if self.variant == "sim1":
            return 1.0
        return self.freq_base ** (j + 1 - self.freq_offset)

    def component(self, j: int, x: np.ndarray) -> np.ndarray:
        """True additive component ``j`` evaluated at covariate values."""
        return np.sin(self.frequency(j) * np.asarray(x, dtype=float))

    def signal_variance(self) -> float:
        """Population variance of the signal under the uniform design.

        Components are independent, each ``sin(c U)`` with ``U`` uniform on
        the simulation domain; the mean is zero by symmetry and
        ``E sin^2(cU) = 1/2 - sin(2ca)/(4ca)`` for half-width ``a``.
        """
        a = SIM_DOMAIN[1]
        total = 0.0
        for j in range(self.J):
            c = self.frequency(j)
            total += 0.5 - math.sin(2 * c * a) / (4 * c * a)
        return total

    def noise_sd(self, truth: np.ndarray) -> float:
        """Noise standard deviation calibrated to the requested SNR."""
        if math.isinf(self.snr):
            return 0.0
        if self.sigma_mode == "analytic":
            return math.sqrt(self.signal_variance() / self.snr)
        return math.sqrt(float(np.var(np.asarray(truth, dtype=float))) / self.snr)


def generate_simulation(spec: SimSpec, seed: int) -> Dataset:
    """Draw one simulated dataset: uniform covariates, additive sinusoid truth,
    Gaussian noise with variance ``signal variance / snr``."""
    rng = np.random.default_rng(seed)
    lo, hi = SIM_DOMAIN
    x = rng.uniform(lo, hi, size=(spec.n, spec.J))
    truth = np.zeros(spec.n)
    for j in range(spec.J):
        truth += spec.component(j, x[:, j])
    noise = spec.noise_sd(truth) * rng.standard_normal(spec.n)
    return Dataset(
        x=x,
        y=truth + noise,
        truth=truth,
        noise=noise,
        domain_bounds=[(lo, hi)] * spec.J,
    )


@dataclass
class SplitPlan:
    """Disjoint train / validation index sets."""

    train_idx: np.ndarray
    val_idx: np.ndarray

    def __post_init__(self) -> None:
        self.train_idx = np.asarray(self.train_idx, dtype=int)
        self.val_idx = np.asarray(self.val_idx, dtype=int)
        if self.train_idx.size == 0 or self.val_idx.size == 0:
            raise ValueError("both index sets must be nonempty")
        if np.intersect1d(self.train_idx, self.val_idx).size:
            raise ValueError("train and validation indices overlap")


def split_train_val(dataset: Dataset, n_t: int, n_v: int, seed: int) -> SplitPlan:
    """Uniformly random disjoint train/validation split, deterministic per seed."""
    n = dataset.n
    if n_t < 1 or n_v < 1:
        raise ValueError("both split sizes must be at least 1")
    if n_t + n_v > n:
        raise ValueError(f"requested {n_t} + {n_v} rows but only {n} available")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPlan(train_idx=perm[:n_t], val_idx=perm[n_t : n_t + n_v])


@dataclass
class FoldPlan:
    """Partition of ``{0..n-1}`` into K folds with sizes differing by at most 1."""

    folds: list[np.ndarray]

    def __post_init__(self) -> None:
        self.folds = [np.asarray(f, dtype=int) for f in self.folds]
        allidx = np.concatenate(self.folds)
        n = allidx.size
        if not np.array_equal(np.sort(allidx), np.arange(n)):
            raise ValueError("folds must partition the index range")
        sizes = [f.size for f in self.folds]
        if max(sizes) - min(sizes) > 1:
            raise ValueError("fold sizes may differ by at most 1")

    @property
    def k(self) -> int:
        return len(self.folds)

    def complement(self, k: int) -> np.ndarray:
        """Training indices for fold ``k`` (all rows outside the fold)."""
        return np.concatenate([f for i, f in enumerate(self.folds) if i != k])


def make_kfold(n: int, k: int, seed: int) -> FoldPlan:
    """Random K-fold partition, deterministic per seed."""
    if not 2 <= k <= n:
        raise ValueError(f"K must be in [2, {n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    return FoldPlan(folds=[perm[i::k] for i in range(k)])


@dataclass
class TyingMap:
    """Equality constraints collapsing J penalty coordinates to k free ones.

    ``assignment[j]`` is the 0-based free-parameter index of coordinate j.
    """

    J: int
    k: int
    assignment: np.ndarray

    def __post_init__(self) -> None:
        self.assignment = np.asarray(self.assignment, dtype=int)
        if self.assignment.shape != (self.J,):
            raise ValueError("assignment must have length J")
        if self.assignment.min() < 0 or self.assignment.max() >= self.k:
            raise ValueError("assignment entries must lie in [0, k)")

    def representatives(self) -> np.ndarray:
        """First coordinate index of each free parameter's block."""
        return np.array(
            [int(np.nonzero(self.assignment == f)[0][0]) for f in range(self.k)]
        )

    def reduce(self, full: np.ndarray) -> np.ndarray:
        """Sum a length-J vector over tied coordinates (gradient pullback)."""
        full = np.asarray(full, dtype=float)
        out = np.zeros(self.k)
        np.add.at(out, self.assignment, full)
        return out


def tying_nested(J: int, k: int) -> TyingMap:
    """Nested tying: k contiguous blocks of J/k coordinates each."""
    if J % k != 0:
        raise ValueError(f"k={k} must divide J={J}")
    return TyingMap(J=J, k=k, assignment=np.repeat(np.arange(k), J // k))


def expand_lambda(tmap: TyingMap, free: np.ndarray) -> np.ndarray:
    """Expand k free penalty values to the full length-J vector."""
    free = np.asarray(free, dtype=float)
    if free.shape != (tmap.k,):
        raise ValueError(f"free vector has shape {free.shape}, expected ({tmap.k},)")
    if np.any(free <= 0):
        raise ValueError("penalty parameters must be strictly positive")
    return free[tmap.assignment]


@dataclass
class LambdaBox:
    """The search hyper-rectangle ``[lambda_min, lambda_max]^J``."""

    lambda_min: float
    lambda_max: float
    J: int

    def __post_init__(self) -> None:
        if not self.lambda_min > 0:
            raise ValueError("lambda_min must be strictly positive")
        if self.lambda_max < self.lambda_min:
            raise ValueError("lambda_max must be at least lambda_min")

    @property
    def delta(self) -> float:
        return self.lambda_max - self.lambda_min

    def contains(self, lam: np.ndarray) -> bool:
        lam = np.asarray(lam, dtype=float)
        return bool(np.all(lam >= self.lambda_min) and np.all(lam <= self.lambda_max))

    def clip(self, lam: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(lam, dtype=float), self.lambda_min, self.lambda_max)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lambda_min, self.lambda_max, size=self.J)


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write ``x1..xJ,y[,truth]`` rows in full float precision."""
    j = dataset.n_features
    header = [f"x{i + 1}" for i in range(j)] + ["y"]
    if dataset.truth is not None:
        header.append("truth")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.x[i]] + [repr(float(dataset.y[i]))]
            if dataset.truth is not None:
                row.append(repr(float(dataset.truth[i])))
            writer.writerow(row)


def load_dataset_csv(path, domain_bounds=None) -> Dataset:
    """Read a dataset written by :func:`save_dataset_csv` (truth column optional)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_truth = header and header[-1] == "truth"
        xcols = header[:-2] if has_truth else header[:-1]
        ycol = header[-2] if has_truth else header[-1]
        expected_x = [f"x{i + 1}" for i in range(len(xcols))]
        if ycol != "y" or xcols != expected_x or not xcols:
            raise ValueError(f"{path}: expected header x1,...,xJ,y[,truth], got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: ragged row with {len(row)} cells")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from exc
    if not rows:
        raise ValueError(f"{path}: no data rows")
    body = np.asarray(rows)
    j = len(xcols)
    return Dataset(
        x=body[:, :j],
        y=body[:, j],
        truth=body[:, j + 1] if has_truth else None,
        domain_bounds=list(domain_bounds) if domain_bounds else [],
    )
