"""Candidate-by-candidate fitting and model selection.

Every admissible column ``k*`` is pinned to 1, the remaining coefficients are
fitted by sparse Bayesian learning and the candidate minimising the chosen
criterion wins. Degenerate fits score ``+inf``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import sbl
from .assembly import RegressionMatrix, candidate_admissible, reduce_for_candidate
from .data import EmpiricalDistanceDistribution
from .kernels import BasisExpansion, BasisFamily, InteractionKernel

CRITERIA = ("wTU", "wPE", "wEU")


class SelectionError(RuntimeError):
    def __init__(self, msg: str, excluded: Sequence[int] = ()):
        self.excluded = list(excluded)
        super().__init__(msg)


class NormalizationError(ArithmeticError):
    pass


def criterion_wPE(posterior: sbl.SblPosterior, Phi, b) -> float:
    """Residual energy over squared coefficient norm."""
    mu = posterior.mean
    nrm = float(mu @ mu)
    if nrm == 0.0:
        return np.inf
    r = np.asarray(b, float) - np.asarray(Phi, float) @ mu
    return float(r @ r) / nrm


def criterion_wEU(posterior: sbl.SblPosterior) -> float:
    nrm = float(posterior.mean @ posterior.mean)
    if nrm == 0.0:
        return np.inf
    return posterior.trace_cov / nrm


def criterion_wTU(posterior: sbl.SblPosterior) -> float:
    s2 = posterior.noise_var_hat
    if s2 is None or not np.isfinite(s2):
        return np.inf
    return (s2 + posterior.trace_cov) / (1.0 + float(posterior.mean @ posterior.mean))


@dataclass(frozen=True, eq=False)
class CandidateResult:
    k_star: int
    admissible: bool
    posterior: Optional[sbl.SblPosterior] = None
    wTU: float = np.inf
    wPE: float = np.inf
    wEU: float = np.inf

    def score(self, criterion: str) -> float:
        return getattr(self, criterion)


@dataclass(frozen=True, eq=False)
class KernelEstimate:
    basis: BasisFamily
    k_star: int
    coefficients: np.ndarray  # c-bar, entry k* equal to 1
    variances: np.ndarray  # posterior variances, 0 at k* and pruned cells
    criterion: str
    candidates: list = field(default_factory=list, repr=False)

    @property
    def kernel(self) -> BasisExpansion:
        return BasisExpansion(self.basis, self.coefficients)

    def __call__(self, r):
        return self.kernel(r)

    def to_dict(self, band_grid=None) -> dict:
        out = {
            "K": self.basis.cell_count,
            "R": self.basis.domain_max,
            "k_star": self.k_star,
            "criterion": self.criterion,
            "coefficients": self.coefficients.tolist(),
            "variances": self.variances.tolist(),
            "candidates": [
                {
                    "k_star": c.k_star,
                    "admissible": c.admissible,
                    "wTU": _num(c.wTU),
                    "wPE": _num(c.wPE),
                    "wEU": _num(c.wEU),
                    "active": None if c.posterior is None else (c.posterior.active + (c.posterior.active >= c.k_star - 1) + 1).tolist(),
                }
                for c in self.candidates
            ],
        }
        if band_grid is not None:
            r = np.asarray(band_grid, float)
            lo, hi = uq_band(self, r)
            out["band"] = {"r": r.tolist(), "estimate": self(r).tolist(),
                           "lower": lo.tolist(), "upper": hi.tolist()}
        return out


def _num(x: float):
    return None if not np.isfinite(x) else float(x)


def evaluate_candidate(A, k_star: int, config: sbl.SblConfig, zero_tol: float = 1e-12) -> CandidateResult:
    if not candidate_admissible(A, k_star, zero_tol):
        return CandidateResult(k_star, admissible=False)
    system = reduce_for_candidate(A, k_star)
    try:
        post = sbl.fit(system, config)
    except (sbl.ConditioningError, sbl.DegenerateModelError):
        return CandidateResult(k_star, admissible=True)
    if post.empty:
        return CandidateResult(k_star, True, post)
    return CandidateResult(
        k_star, True, post,
        wTU=criterion_wTU(post),
        wPE=criterion_wPE(post, system.Phi, system.b),
        wEU=criterion_wEU(post),
    )


def _argmin_stable(values: np.ndarray) -> int:
    best = values.min()
    tol = 1e-12 * abs(best)
    return int(np.flatnonzero(values <= best + tol)[0])


def fit_candidates(
    A,
    config: sbl.SblConfig = sbl.SblConfig(),
    candidates: Optional[Iterable[int]] = None,
    jobs: int = 1,
) -> list:
    """Evaluate every requested candidate (all columns by default), in index order."""
    mat = A.matrix if isinstance(A, RegressionMatrix) else np.asarray(A, float)
    K = mat.shape[1]
    if K < 2:
        raise ValueError("need at least two basis columns")
    ks = list(range(1, K + 1)) if candidates is None else sorted(set(int(k) for k in candidates))
    for k in ks:
        if not 1 <= k <= K:
            raise SelectionError(f"candidate {k} outside 1..{K}")

    def run(k):
        return evaluate_candidate(mat, k, config)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(run, ks))
    return [run(k) for k in ks]


def choose_estimate(A, results: list, criterion: str = "wTU",
                    basis: Optional[BasisFamily] = None) -> KernelEstimate:
    """Criterion minimiser among fitted candidates (ties to the smallest index)."""
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    if isinstance(A, RegressionMatrix):
        basis = A.basis
    mat = A.matrix if isinstance(A, RegressionMatrix) else np.asarray(A, float)
    if basis is None:
        basis = BasisFamily(float(mat.shape[1]), mat.shape[1])
    excluded = [r.k_star for r in results if not r.admissible]
    scores = np.array([r.score(criterion) for r in results])
    if not np.any(np.isfinite(scores)):
        if len(excluded) == len(results):
            raise SelectionError(f"no admissible candidates; excluded {excluded}", excluded)
        raise SelectionError(
            f"every admissible candidate was degenerate; excluded {excluded}", excluded
        )
    win = results[_argmin_stable(scores)]
    post = win.posterior
    coeffs = reduce_for_candidate(mat, win.k_star).embed(post.mean)
    var = np.insert(np.diag(post.covariance), win.k_star - 1, 0.0)
    return KernelEstimate(basis, win.k_star, coeffs, var, criterion, results)


def select_model(
    A,
    config: sbl.SblConfig = sbl.SblConfig(),
    criterion: str = "wTU",
    candidates: Optional[Iterable[int]] = None,
    jobs: int = 1,
    basis: Optional[BasisFamily] = None,
) -> KernelEstimate:
    """Fit every admissible candidate and keep the criterion minimiser."""
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    results = fit_candidates(A, config, candidates, jobs)
    return choose_estimate(A, results, criterion, basis)


def uq_band(estimate: KernelEstimate, r):
    """Lower/upper envelopes from ``mu_k -+ 2 Sigma_kk`` on each non-pinned cell."""
    r = np.asarray(r, float)
    phi = estimate.basis.design(r)
    pinned = phi[..., estimate.k_star - 1]
    mu = estimate.coefficients.copy()
    mu[estimate.k_star - 1] = 0.0
    a = (mu - 2.0 * estimate.variances) * phi
    b = (mu + 2.0 * estimate.variances) * phi
    lower = pinned + np.minimum(a, b).sum(axis=-1)
    upper = pinned + np.maximum(a, b).sum(axis=-1)
    return lower, upper


def normalization_scale(kernel, reference: InteractionKernel, rho: EmpiricalDistanceDistribution) -> float:
    num = rho.integrate(lambda r: np.abs(reference(r)))
    den = rho.integrate(lambda r: np.abs(kernel(r)))
    if not den > 0:
        raise NormalizationError("estimate has zero mass under the distance distribution")
    return num / den


def normalize_estimate(estimate, reference: InteractionKernel, rho: EmpiricalDistanceDistribution) -> np.ndarray:
    """Coefficients rescaled so both kernels have equal rho-weighted L1 mass."""
    kern = estimate.kernel if isinstance(estimate, KernelEstimate) else estimate
    return kern.coefficients * normalization_scale(kern, reference, rho)


def error_metrics(estimate, truth: InteractionKernel, rho: EmpiricalDistanceDistribution) -> dict:
    """Relative sup error on the distance samples and rho-weighted relative L1 error."""
    r = rho.samples
    est = np.asarray(estimate(r), float)
    ref = np.asarray(truth(r), float)
    diff = np.abs(est - ref)
    ref_max = np.abs(ref).max()
    l1_ref = float(rho.weights @ np.abs(ref))
    return {
        "rel_Linf": float(diff.max() / ref_max) if ref_max > 0 else float("inf"),
        "rel_L1_rho": float(rho.weights @ diff) / l1_ref if l1_ref > 0 else float("inf"),
    }
