"""Trajectory datasets: generation, noise, distance statistics and CSV I/O."""
from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import (
    IntegrationError,
    IntegratorConfig,
    SingularNormalizationError,
    SystemSpec,
    accel_second_order,
    drift_first_order,
    integrate,
    sample_initial_conditions,
    sample_times,
)


class DatasetParseError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class TrialFailure(RuntimeError):
    def __init__(self, trial: int, cause: Exception):
        self.trial = trial
        self.cause = cause
        super().__init__(f"trial {trial}: {cause}")


@dataclass(frozen=True)
class ICBox:
    low: tuple
    high: tuple
    vel_low: Optional[tuple] = None
    vel_high: Optional[tuple] = None


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """``M`` trials observed at ``L`` times; arrays are ``[M, L, N, d]``."""

    order: int
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: Optional[np.ndarray] = None
    include_self: bool = True
    seed: Optional[int] = None
    v_bar: Optional[float] = None
    masses: Optional[np.ndarray] = field(default=None, repr=False)
    noise_level: float = 0.0

    def __post_init__(self):
        M, L, N, d = self.positions.shape
        if self.times.shape != (L,):
            raise ValueError("times do not match the L axis")
        if self.velocities.shape != (M, L, N, d):
            raise ValueError("velocity array shape mismatch")
        if self.order == 2:
            if self.accelerations is None or self.accelerations.shape != (M, L, N, d):
                raise ValueError("order-2 datasets need accelerations of matching shape")
        arrays = [self.positions, self.velocities]
        if self.accelerations is not None:
            arrays.append(self.accelerations)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("dataset contains non-finite entries")

    M = property(lambda self: self.positions.shape[0])
    L = property(lambda self: self.positions.shape[1])
    N = property(lambda self: self.positions.shape[2])
    d = property(lambda self: self.positions.shape[3])

    def mass_vector(self) -> np.ndarray:
        return np.ones(self.N) if self.masses is None else np.asarray(self.masses, float)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(np.asarray(a), np.asarray(b))

        return (
            self.order == other.order
            and self.include_self == other.include_self
            and self.seed == other.seed
            and (self.v_bar == other.v_bar or (self.v_bar is not None and other.v_bar is not None
                                               and np.isnan(self.v_bar) and np.isnan(other.v_bar)))
            and same(self.times, other.times)
            and same(self.positions, other.positions)
            and same(self.velocities, other.velocities)
            and same(self.accelerations, other.accelerations)
            and np.array_equal(self.mass_vector(), other.mass_vector())
        )

    __hash__ = None


def trial_rng_seed(seed: int, trial: int) -> list:
    """Entropy for trial ``trial``: the pair ``[seed, trial]``."""
    return [int(seed), int(trial)]


NOISE_STREAM = 2**32 - 1


def noise_rng_seed(seed: int) -> list:
    """Entropy for observation noise: ``[seed, 2**32 - 1]``, disjoint from every trial stream."""
    return [int(seed), NOISE_STREAM]


def generate_dataset(
    spec: SystemSpec,
    M: int,
    L: int,
    T: float,
    ic_box: ICBox,
    seed: int,
    integrator: IntegratorConfig = IntegratorConfig(),
) -> TrajectoryDataset:
    if M < 1 or L < 1:
        raise ValueError("M and L must be at least 1")
    if not T > 0:
        raise ValueError("T must be positive")
    if spec.order == 2 and (ic_box.vel_low is None or ic_box.vel_high is None):
        raise ValueError("second-order systems need a velocity box")
    t = sample_times(T, L)
    N, d = spec.N, spec.d
    pos = np.empty((M, L, N, d))
    vel = np.empty_like(pos)
    acc = np.empty_like(pos) if spec.order == 2 else None
    for m in range(M):
        ic = sample_initial_conditions(
            ic_box.low, ic_box.high, N, trial_rng_seed(seed, m),
            ic_box.vel_low if spec.order == 2 else None,
            ic_box.vel_high if spec.order == 2 else None,
        )
        if ic.positions.shape[1] != d:
            raise ValueError("initial-condition box dimension differs from d")
        try:
            traj = integrate(spec, ic, t, integrator)
            pos[m] = traj.positions
            for l in range(L):
                if spec.order == 1:
                    vel[m, l] = drift_first_order(spec, traj.positions[l])
                else:
                    vel[m, l] = traj.velocities[l]
                    acc[m, l] = accel_second_order(spec, traj.positions[l], traj.velocities[l])
        except (IntegrationError, SingularNormalizationError) as exc:
            raise TrialFailure(m, exc) from exc
    ds = TrajectoryDataset(
        order=spec.order, times=t, positions=pos, velocities=vel, accelerations=acc,
        include_self=spec.include_self, seed=seed,
        masses=None if spec.order == 1 else np.asarray(spec.masses, float),
    )
    return dataclasses.replace(ds, v_bar=mean_speed(ds))


def mean_speed(dataset: TrajectoryDataset) -> float:
    """Mean Euclidean norm of the observed velocities."""
    return float(np.linalg.norm(dataset.velocities, axis=-1).mean())


def inject_noise(dataset: TrajectoryDataset, level: float, seed) -> TrajectoryDataset:
    """Add Gaussian noise of std ``level * v_bar`` to the highest observed derivative."""
    if not level >= 0:
        raise ValueError("noise level must be nonnegative")
    v_bar = dataset.v_bar if dataset.v_bar is not None else mean_speed(dataset)
    if level == 0:
        return dataclasses.replace(dataset, v_bar=v_bar)
    rng = np.random.default_rng(seed)
    sigma = level * v_bar
    if dataset.order == 1:
        noisy = dataset.velocities + sigma * rng.standard_normal(dataset.velocities.shape)
        return dataclasses.replace(dataset, velocities=noisy, v_bar=v_bar, noise_level=level)
    noisy = dataset.accelerations + sigma * rng.standard_normal(dataset.accelerations.shape)
    return dataclasses.replace(dataset, accelerations=noisy, v_bar=v_bar, noise_level=level)


@dataclass(frozen=True)
class EmpiricalDistanceDistribution:
    samples: np.ndarray
    weights: np.ndarray

    def integrate(self, f) -> float:
        """Weighted sum ``sum_s w_s f(r_s)``."""
        return float(np.dot(self.weights, f(self.samples)))

    def support_max(self) -> float:
        return float(self.samples.max())


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    diff = x[..., None, :, :] - x[..., :, None, :]
    return np.sqrt(np.einsum("...k,...k->...", diff, diff))


def empirical_distance_distribution(dataset: TrajectoryDataset) -> EmpiricalDistanceDistribution:
    """Uniform weight over ordered pairs ``i != i'`` across all trials and times."""
    N = dataset.N
    if N < 2:
        raise ValueError("need at least two agents")
    r = pairwise_distances(dataset.positions)
    off = ~np.eye(N, dtype=bool)
    samples = r[..., off].ravel()
    weights = np.full(samples.size, 1.0 / samples.size)
    return EmpiricalDistanceDistribution(samples=samples, weights=weights)


# -- CSV ----------------------------------------------------------------------

HEADER_KEYS = ["order", "N", "d", "M", "L", "include_self", "seed", "v_bar"]


def _fmt(x: float) -> str:
    return repr(float(x))


def export_csv(dataset: TrajectoryDataset, path) -> None:
    """Write one row per (trial, time, agent) below a two-line metadata header.

    Layout::

        # order,N,d,M,L,include_self,seed,v_bar
        # 1,100,1,3,6,true,7,0.0123
        # masses,1.0,...          (order 2 only)
        m,l,t,i,x_1..x_d,v_1..v_d[,a_1..a_d]
        0,0,0.0,0,...

    Trial, time and agent indices are zero-based.
    """
    ds = dataset
    M, L, N, d = ds.positions.shape
    meta = [ds.order, N, d, M, L, "true" if ds.include_self else "false",
            "" if ds.seed is None else int(ds.seed),
            "" if ds.v_bar is None else _fmt(ds.v_bar)]
    cols = ["m", "l", "t", "i"] + [f"x_{c + 1}" for c in range(d)] + [f"v_{c + 1}" for c in range(d)]
    if ds.order == 2:
        cols += [f"a_{c + 1}" for c in range(d)]
    buf = io.StringIO()
    buf.write("# " + ",".join(HEADER_KEYS) + "\n")
    buf.write("# " + ",".join(str(v) for v in meta) + "\n")
    if ds.order == 2:
        buf.write("# masses," + ",".join(_fmt(v) for v in ds.mass_vector()) + "\n")
    buf.write(",".join(cols) + "\n")
    for m in range(M):
        for l in range(L):
            t = _fmt(ds.times[l])
            for i in range(N):
                vals = list(ds.positions[m, l, i]) + list(ds.velocities[m, l, i])
                if ds.order == 2:
                    vals += list(ds.accelerations[m, l, i])
                buf.write(f"{m},{l},{t},{i}," + ",".join(_fmt(v) for v in vals) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def import_csv(path) -> TrajectoryDataset:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetParseError("empty file", 1)
    if not lines[0].startswith("#") or lines[0][1:].strip().split(",") != HEADER_KEYS:
        raise DatasetParseError("missing metadata header", 1)
    if len(lines) < 2 or not lines[1].startswith("#"):
        raise DatasetParseError("missing metadata values", 2)
    vals = lines[1][1:].strip().split(",")
    if len(vals) != len(HEADER_KEYS):
        raise DatasetParseError("metadata has wrong number of fields", 2)
    try:
        order, N, d, M, L = (int(v) for v in vals[:5])
        if vals[5] not in ("true", "false"):
            raise ValueError(vals[5])
        include_self = vals[5] == "true"
        seed = int(vals[6]) if vals[6] else None
        v_bar = float(vals[7]) if vals[7] else None
    except ValueError as exc:
        raise DatasetParseError(f"bad metadata value ({exc})", 2) from None
    if order not in (1, 2) or min(N, d, M, L) < 1:
        raise DatasetParseError("metadata out of range", 2)
    pos_line = 2
    masses = None
    if order == 2 and pos_line < len(lines) and lines[pos_line].startswith("# masses"):
        try:
            masses = np.array([float(v) for v in lines[pos_line][1:].strip().split(",")[1:]])
        except ValueError:
            raise DatasetParseError("bad masses line", pos_line + 1) from None
        if masses.shape != (N,):
            raise DatasetParseError("masses line has wrong length", pos_line + 1)
        pos_line += 1
    width = 4 + d * (3 if order == 2 else 2)
    if pos_line >= len(lines):
        raise DatasetParseError("missing column header", pos_line + 1)
    header = lines[pos_line].split(",")
    if len(header) != width or header[:4] != ["m", "l", "t", "i"]:
        raise DatasetParseError("column header inconsistent with metadata", pos_line + 1)
    body = lines[pos_line + 1:]
    if len(body) != M * L * N:
        raise DatasetParseError(
            f"expected {M * L * N} data rows, found {len(body)}", pos_line + 2 + min(len(body), M * L * N)
        )
    pos = np.empty((M, L, N, d))
    vel = np.empty_like(pos)
    acc = np.empty_like(pos) if order == 2 else None
    times = np.full(L, np.nan)
    for row, line in enumerate(body):
        lineno = pos_line + 2 + row
        parts = line.split(",")
        if len(parts) != width:
            raise DatasetParseError(f"expected {width} fields, got {len(parts)}", lineno)
        try:
            m, l, i = int(parts[0]), int(parts[1]), int(parts[3])
            t = float(parts[2])
            nums = [float(p) for p in parts[4:]]
        except ValueError:
            raise DatasetParseError("malformed number", lineno) from None
        if not (0 <= m < M and 0 <= l < L and 0 <= i < N):
            raise DatasetParseError(f"index (m={m}, l={l}, i={i}) out of range", lineno)
        if (m * L + l) * N + i != row:
            raise DatasetParseError("rows out of canonical (m, l, i) order", lineno)
        if np.isnan(times[l]):
            times[l] = t
        elif times[l] != t:
            raise DatasetParseError("inconsistent time for sample index", lineno)
        pos[m, l, i] = nums[:d]
        vel[m, l, i] = nums[d:2 * d]
        if order == 2:
            acc[m, l, i] = nums[2 * d:]
    try:
        return TrajectoryDataset(
            order=order, times=times, positions=pos, velocities=vel, accelerations=acc,
            include_self=include_self, seed=seed, v_bar=v_bar, masses=masses,
        )
    except ValueError as exc:
        raise DatasetParseError(str(exc)) from None
