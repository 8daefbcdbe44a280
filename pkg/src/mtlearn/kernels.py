"""Interaction kernels and piecewise-constant indicator bases.

Kernels are small frozen dataclasses exposing a vectorised ``__call__``.
The indicator basis uses half-open cells ``[h(k-1), hk)`` with the final
cell closed at ``R`` so that the cells partition ``[0, R]`` exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class KernelDomainError(ValueError):
    """Raised when a kernel is evaluated at a negative or non-finite distance."""


def _check_r(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise KernelDomainError("kernel argument must be finite")
    if np.any(r < 0):
        raise KernelDomainError("kernel argument must be nonnegative")
    return r


def _ret(out: np.ndarray, r: np.ndarray):
    return float(out) if r.ndim == 0 else out


@dataclass(frozen=True)
class OpinionThreshold:
    """Three-level threshold kernel: 1 on [0, 0.5), 0.1 on [0.5, 1), 0 beyond."""

    name = "opinion_threshold"

    def __call__(self, r):
        r = _check_r(r)
        out = np.where(r < 0.5, 1.0, np.where(r < 1.0, 0.1, 0.0))
        return _ret(out, r)


@dataclass(frozen=True)
class CutOff:
    """Indicator of the closed ball ``[0, radius]``."""

    radius: float = 0.5
    name = "cutoff"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("cut-off radius must be positive")

    def __call__(self, r):
        r = _check_r(r)
        return _ret((r <= self.radius).astype(float), r)


@dataclass(frozen=True)
class RapidDecay:
    """Smooth kernel ``(1 + r^2)^(-1/4)``."""

    name = "rapid_decay"

    def __call__(self, r):
        r = _check_r(r)
        return _ret((1.0 + r * r) ** -0.25, r)


@dataclass(frozen=True)
class BasisFamily:
    """``K`` indicator functions on equal cells of ``[0, R]``."""

    domain_max: float
    cell_count: int

    def __post_init__(self):
        if not (self.domain_max > 0 and math.isfinite(self.domain_max)):
            raise ValueError("domain_max must be positive and finite")
        if int(self.cell_count) != self.cell_count or self.cell_count < 1:
            raise ValueError("cell_count must be a positive integer")

    @property
    def width(self) -> float:
        return self.domain_max / self.cell_count

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.domain_max, self.cell_count + 1)

    def cell_index(self, r) -> np.ndarray:
        """Zero-based cell index of each distance, ``-1`` outside ``[0, R]``."""
        r = _check_r(r)
        idx = np.floor(r / self.width).astype(np.int64)
        idx = np.where(r == self.domain_max, self.cell_count - 1, idx)
        idx = np.where(r > self.domain_max, -1, idx)
        # guard float rounding right below R
        return np.minimum(idx, self.cell_count - 1)

    def evaluate(self, k: int, r):
        """Indicator of cell ``k`` (one-based) at ``r``."""
        if not 1 <= k <= self.cell_count:
            raise IndexError(f"basis index {k} outside 1..{self.cell_count}")
        r = _check_r(r)
        return _ret((self.cell_index(r) == k - 1).astype(float), r)

    def design(self, r) -> np.ndarray:
        """Matrix of all basis values, shape ``r.shape + (K,)``."""
        idx = self.cell_index(r)
        out = np.zeros(idx.shape + (self.cell_count,))
        inside = idx >= 0
        out[inside, idx[inside]] = 1.0
        return out


@dataclass(frozen=True)
class BasisExpansion:
    """Kernel ``sum_k c_k xi_k`` over a :class:`BasisFamily`."""

    basis: BasisFamily
    coefficients: np.ndarray = field(repr=False)
    name = "basis_expansion"

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).copy()
        if c.shape != (self.basis.cell_count,):
            raise ValueError(
                f"expected {self.basis.cell_count} coefficients, got shape {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def __call__(self, r):
        r = _check_r(r)
        idx = self.basis.cell_index(r)
        out = np.where(idx >= 0, self.coefficients[np.maximum(idx, 0)], 0.0)
        return _ret(out, r)

    def __eq__(self, other):
        return (
            isinstance(other, BasisExpansion)
            and self.basis == other.basis
            and np.array_equal(self.coefficients, other.coefficients)
        )

    __hash__ = None


InteractionKernel = Union[OpinionThreshold, CutOff, RapidDecay, BasisExpansion]


def eval_kernel(kernel: InteractionKernel, r):
    return kernel(r)


def eval_basis(basis: BasisFamily, k: int, r):
    return basis.evaluate(k, r)


def expand(basis: BasisFamily, coefficients) -> BasisExpansion:
    return BasisExpansion(basis, np.asarray(coefficients, dtype=float))


def opinion_threshold_coefficients(basis: BasisFamily) -> np.ndarray:
    """Exact coefficients of :class:`OpinionThreshold` when cells align with 0.5 and 1."""
    left = basis.edges[:-1]
    return OpinionThreshold()(left)


def project(kernel: InteractionKernel, basis: BasisFamily) -> np.ndarray:
    """Cell averages of ``kernel`` by 16-point Gauss-Legendre quadrature."""
    x, wq = np.polynomial.legendre.leggauss(16)
    edges = basis.edges
    a, b = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    return (kernel(pts) * wq[None, :]).sum(axis=1) / 2.0


# -- config (de)serialisation ------------------------------------------------

def kernel_to_dict(kernel: InteractionKernel) -> dict:
    if isinstance(kernel, OpinionThreshold):
        return {"type": "opinion_threshold"}
    if isinstance(kernel, CutOff):
        return {"type": "cutoff", "radius": kernel.radius}
    if isinstance(kernel, RapidDecay):
        return {"type": "rapid_decay"}
    if isinstance(kernel, BasisExpansion):
        return {
            "type": "basis_expansion",
            "K": kernel.basis.cell_count,
            "R": kernel.basis.domain_max,
            "coefficients": [float(c) for c in kernel.coefficients],
        }
    raise TypeError(f"unknown kernel {kernel!r}")


def kernel_from_dict(spec: dict) -> InteractionKernel:
    spec = dict(spec)
    kind = spec.pop("type", None)
    allowed = {
        "opinion_threshold": set(),
        "cutoff": {"radius"},
        "rapid_decay": set(),
        "basis_expansion": {"K", "R", "coefficients"},
    }
    if kind not in allowed:
        raise ValueError(f"unknown kernel type {kind!r}")
    extra = set(spec) - allowed[kind]
    if extra:
        raise ValueError(f"unknown keys for kernel {kind!r}: {sorted(extra)}")
    if kind == "opinion_threshold":
        return OpinionThreshold()
    if kind == "cutoff":
        return CutOff(float(spec.get("radius", 0.5)))
    if kind == "rapid_decay":
        return RapidDecay()
    basis = BasisFamily(float(spec["R"]), int(spec["K"]))
    return BasisExpansion(basis, np.asarray(spec["coefficients"], dtype=float))
