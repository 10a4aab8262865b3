"""The MVG mechanism with directional noise, PNR-optimal allocation, and baselines.

A noise design is a set of orthonormal directions ``W`` (columns) and a
precision allocation ``theta``. Direction ``i`` receives precision
``p_i = theta_i * P`` out of the budget ``P``; its covariance singular value is
``1/sqrt(p_i)`` and ``Sigma = W diag(1/sqrt(p)) W^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import matcore
from .budget import (
    ConditionReport,
    CovarianceQuery,
    Mode,
    PrivacyParams,
    QuerySpec,
    Theorem,
    budget_terms,
    check_sufficient,
    general_bound,
    precision_budget,
    sensitivity_catalog,
)
from .errors import (
    AllocationError,
    ConsistencyError,
    ParameterError,
    StructureError,
)
from .sampler import MvgSpec, RandomSeed, sample_auto

ORTHO_TOL = 1e-8
THETA_SUM_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class NoiseDirections:
    w: np.ndarray

    def __post_init__(self):
        w = matcore.as_matrix(self.w, "directions")
        m = w.shape[0]
        if w.shape != (m, m):
            raise ParameterError(f"directions must be square, got {w.shape}")
        if matcore.frobenius_norm(w.T @ w - np.eye(m)) > ORTHO_TOL * math.sqrt(m):
            raise ParameterError("direction columns are not orthonormal")
        object.__setattr__(self, "w", w)

    @classmethod
    def identity(cls, m: int) -> "NoiseDirections":
        return cls(np.eye(m))

    @property
    def m(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True, eq=False)
class PrecisionAllocation:
    """Fractions of the precision budget per direction.

    A total below one under-spends the budget, which only tightens privacy.
    """

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.size == 0 or not np.all(np.isfinite(theta)):
            raise AllocationError("theta must be a non-empty finite vector")
        if np.any(theta <= 0):
            raise AllocationError("every theta_i must be positive")
        if np.any(theta > 1):
            raise AllocationError("every theta_i must be at most 1")
        if theta.sum() > 1.0 + THETA_SUM_SLACK:
            raise AllocationError(f"theta sums to {theta.sum():.12g} > 1 and overspends the budget")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def uniform(cls, m: int) -> "PrecisionAllocation":
        return cls(np.full(m, 1.0 / m))

    @property
    def total(self) -> float:
        return float(self.theta.sum())


def binary_allocation(m: int, flagged: Sequence[int], tau: float) -> PrecisionAllocation:
    """Give fraction ``tau`` equally to ``flagged`` directions, the rest equally to the others."""
    if not 0.0 < tau < 1.0:
        raise ParameterError("tau must lie in (0,1)")
    flagged = sorted(set(int(i) for i in flagged))
    if any(i < 0 or i >= m for i in flagged):
        raise ParameterError(f"flagged indices must lie in [0, {m})")
    k = len(flagged)
    if k in (0, m):
        return PrecisionAllocation.uniform(m)
    theta = np.full(m, (1.0 - tau) / (m - k))
    theta[flagged] = tau / k
    return PrecisionAllocation(theta)


@dataclass(frozen=True, eq=False)
class MechanismOutput:
    value: np.ndarray
    sigma: np.ndarray
    psi: np.ndarray
    budget: float
    budget_spent: float
    condition_report: ConditionReport
    theorem: Theorem = Theorem.GENERAL
    metadata: dict = field(default_factory=dict)


def compile_covariance(dirs: NoiseDirections, alloc: PrecisionAllocation, budget: float) -> np.ndarray:
    if not (math.isfinite(budget) and budget > 0):
        raise ParameterError(f"precision budget must be positive and finite, got {budget}")
    if alloc.theta.size != dirs.m:
        raise AllocationError(f"theta has {alloc.theta.size} entries for {dirs.m} directions")
    precision = alloc.theta * budget
    sd = 1.0 / np.sqrt(precision)
    sigma = (dirs.w * sd) @ dirs.w.T
    return 0.5 * (sigma + sigma.T)


def _check_shape(f_x, q: QuerySpec) -> np.ndarray:
    f_x = matcore.as_matrix(f_x, "query answer")
    if f_x.shape != (q.m, q.n):
        raise ParameterError(f"query answer has shape {f_x.shape}, spec says {q.m}x{q.n}")
    return f_x


def _spent(sigma: np.ndarray) -> float:
    eig = matcore.spd_eigvals(sigma)
    return float(np.sum(1.0 / (eig * eig)))


@dataclass(frozen=True, eq=False)
class MvgDesign:
    """A certified ``(Sigma, Psi)`` pair ready to perturb query answers.

    Compiling and certifying is done once; :meth:`perturb` only draws noise,
    so repeated trials with a fixed design skip the eigen-solves.
    """

    q: QuerySpec
    sigma: np.ndarray
    psi: np.ndarray
    budget: float
    condition_report: ConditionReport
    theorem: Theorem

    @cached_property
    def budget_spent(self) -> float:
        return _spent(self.sigma)

    @cached_property
    def noise_spec(self) -> MvgSpec:
        return MvgSpec(self.sigma, self.psi)

    def perturb(self, f_x, seed: RandomSeed) -> MechanismOutput:
        f_x = _check_shape(f_x, self.q)
        z = sample_auto(self.noise_spec, seed)
        return MechanismOutput(
            value=f_x + z,
            sigma=self.sigma,
            psi=self.psi,
            budget=self.budget,
            budget_spent=self.budget_spent,
            condition_report=self.condition_report,
            theorem=self.theorem,
        )


def _certify(q, p, sigma, psi, theorem) -> ConditionReport:
    report = check_sufficient(sigma, psi, q, p, theorem)
    if not report.holds:
        raise ConsistencyError(f"compiled covariance violates the privacy condition: {report}")
    return report


def design_unimodal(
    q: QuerySpec, p: PrivacyParams, dirs: NoiseDirections, alloc: PrecisionAllocation
) -> MvgDesign:
    if q.is_psd:
        raise StructureError("unimodal noise expects a general query; use mvg_equimodal")
    if dirs.m != q.m:
        raise ParameterError(f"{dirs.m} directions for a query with {q.m} rows")
    budget = precision_budget(q, p, Mode.UNIMODAL)
    sigma = compile_covariance(dirs, alloc, budget)
    psi = np.eye(q.n)
    report = _certify(q, p, sigma, psi, Theorem.GENERAL)
    return MvgDesign(q, sigma, psi, budget, report, Theorem.GENERAL)


def design_equimodal(
    q: QuerySpec, p: PrivacyParams, dirs: NoiseDirections, alloc: PrecisionAllocation, theorem
) -> MvgDesign:
    theorem = Theorem(theorem)
    if q.m != q.n:
        raise StructureError("equi-modal noise requires a square query")
    if theorem is Theorem.PSD and not q.is_psd:
        raise StructureError("the PSD branch needs a symmetric PSD query spec")
    if dirs.m != q.m:
        raise ParameterError(f"{dirs.m} directions for a query with {q.m} rows")
    budget = precision_budget(q, p, Mode.EQUIMODAL, theorem)
    sigma = compile_covariance(dirs, alloc, budget)
    report = _certify(q, p, sigma, sigma, theorem)
    return MvgDesign(q, sigma, sigma, budget, report, theorem)


def mvg_unimodal(
    f_x,
    q: QuerySpec,
    p: PrivacyParams,
    dirs: NoiseDirections,
    alloc: PrecisionAllocation,
    seed: RandomSeed,
) -> MechanismOutput:
    """Directional row-wise noise with i.i.d. column-wise noise (``Psi = I_n``)."""
    _check_shape(f_x, q)
    return design_unimodal(q, p, dirs, alloc).perturb(f_x, seed)


def mvg_equimodal(
    f_x,
    q: QuerySpec,
    p: PrivacyParams,
    dirs: NoiseDirections,
    alloc: PrecisionAllocation,
    theorem,
    seed: RandomSeed,
) -> MechanismOutput:
    """Identical row-wise and column-wise noise (``Psi = Sigma``) for square queries."""
    _check_shape(f_x, q)
    return design_equimodal(q, p, dirs, alloc, theorem).perturb(f_x, seed)


# --- PNR-optimal allocation ----------------------------------------------


class WaterFill(NamedTuple):
    lambda_z_inv: np.ndarray
    c: float
    active: np.ndarray


def waterfill_allocation(lambda_f, d: float) -> WaterFill:
    """Maximize ``prod_i (x_i + 1/lambda_i)`` subject to ``sum_i x_i = d, x >= 0``.

    Returns ``x = (c - 1/lambda_i)^+``. The active set is the ``k`` smallest
    floors for the largest ``k`` whose level clears the ``k``-th floor. Each
    ``x_i`` is evaluated as ``(d - sum_j (f_i - f_j)) / k`` over active ``j``
    rather than ``c - f_i``, so budgets far below the floors' magnitude are
    not lost to cancellation.
    """
    lam = np.asarray(lambda_f, dtype=float).reshape(-1)
    if lam.size == 0 or not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise ParameterError("lambda_f must be a non-empty vector of positive values")
    if not (math.isfinite(d) and d > 0):
        raise ParameterError("water-filling budget d must be positive")
    floor = 1.0 / lam
    order = np.argsort(floor, kind="stable")
    f = floor[order]
    k = 1
    for j in range(2, f.size + 1):
        # level on the first j floors must stay above the j-th floor
        if d - math.fsum(f[j - 1] - f[:j]) > 0:
            k = j
        else:
            break
    head = f[:k]
    x_sorted = np.array([(d - math.fsum(fi - head)) / k for fi in head])
    x = np.zeros_like(floor)
    x[order[:k]] = x_sorted
    active = np.zeros(floor.size, dtype=bool)
    active[order[:k]] = True
    c = (d + math.fsum(head)) / k
    return WaterFill(lambda_z_inv=x, c=float(c), active=active)


class PnrDesign(NamedTuple):
    covariance: np.ndarray
    directions: np.ndarray
    variances: np.ndarray
    lambda_z_inv: np.ndarray
    c: float
    floor: Optional[float]
    budget: float


def max_pnr_covariance(
    k_f,
    q: QuerySpec | None = None,
    p: PrivacyParams | None = None,
    budget: float | None = None,
) -> PnrDesign:
    """Joint noise covariance maximizing PNR for signal covariance ``k_f``.

    The noise shares the eigenvectors of ``k_f``; precisions along them come
    from water filling with budget ``general_bound(q, p)`` unless ``budget`` is
    given. Directions dropped by water filling receive the largest active
    variance as a floor (recorded in ``floor``) instead of infinite variance.
    """
    k_f = matcore.as_spd(k_f, "k_f")
    if budget is None:
        if q is None or p is None:
            raise ParameterError("pass either (q, p) or an explicit budget")
        if k_f.shape[0] != q.m * q.n:
            raise ParameterError(f"k_f must be {q.m * q.n} square for a {q.m}x{q.n} query")
        budget = general_bound(budget_terms(q, p), p)
    lam, vecs = np.linalg.eigh(k_f)
    lam = lam[::-1]
    vecs = vecs[:, ::-1]
    if lam[-1] <= 0:
        raise StructureError("k_f must be strictly positive definite for water filling")
    wf = waterfill_allocation(lam, budget)
    variances = np.empty_like(lam)
    variances[wf.active] = 1.0 / wf.lambda_z_inv[wf.active]
    floor = None
    if not np.all(wf.active):
        floor = float(variances[wf.active].max())
        variances[~wf.active] = floor
    cov = (vecs * variances) @ vecs.T
    return PnrDesign(
        covariance=0.5 * (cov + cov.T),
        directions=vecs,
        variances=variances,
        lambda_z_inv=wf.lambda_z_inv,
        c=wf.c,
        floor=floor,
        budget=float(budget),
    )


def pnr_allocation(eigenvalues, budget: float) -> PrecisionAllocation:
    """Precision allocation for Algorithm-1 style designs from water filling.

    Directions water filling drops get the smallest active precision, then the
    whole vector is rescaled to sum to one so the budget is never exceeded.
    """
    wf = waterfill_allocation(eigenvalues, budget)
    prec = wf.lambda_z_inv.copy()
    prec[~wf.active] = prec[wf.active].min()
    return PrecisionAllocation(prec / prec.sum())


# --- private directions --------------------------------------------------


class PrivateDirections(NamedTuple):
    dirs: NoiseDirections
    remaining: PrivacyParams
    eigenvalues: np.ndarray


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        nz = np.flatnonzero(out[:, j])
        if nz.size and out[nz[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


def private_directions(
    x, frac: float, p: PrivacyParams, seed: RandomSeed, bound: float = 1.0
) -> PrivateDirections:
    """Eigenvectors of a Gaussian-perturbed ``X X^T / n`` spending ``frac`` of (eps, delta).

    ``bound`` is the public bound on ``|x_ij|`` fixing the covariance query's
    sensitivity. Eigenvectors are ordered by decreasing noisy eigenvalue.
    """
    if not 0.0 < frac < 1.0:
        raise ParameterError("frac must lie in (0,1)")
    x = matcore.as_matrix(x, "data")
    m, n = x.shape
    sens = sensitivity_catalog(CovarianceQuery(c=bound, m=m, n=n))
    spend = PrivacyParams(frac * p.epsilon, frac * p.delta)
    q = QuerySpec(m, m, sens.s2, sens.gamma)
    noisy = baseline_gaussian(x @ x.T / n, q, spend, seed)
    noisy = 0.5 * (noisy + noisy.T)
    lam, vecs = np.linalg.eigh(noisy)
    order = np.argsort(lam)[::-1]
    w = _fix_signs(vecs[:, order])
    return PrivateDirections(
        dirs=NoiseDirections(w),
        remaining=PrivacyParams((1 - frac) * p.epsilon, (1 - frac) * p.delta),
        eigenvalues=lam[order],
    )


# --- baselines -----------------------------------------------------------


def gaussian_scale(s2: float, p: PrivacyParams) -> float:
    """Per-entry deviation of the classical Gaussian mechanism."""
    return s2 * math.sqrt(2.0 * math.log(1.25 / p.delta)) / p.epsilon


def baseline_gaussian(f_x, q: QuerySpec, p: PrivacyParams, seed: RandomSeed) -> np.ndarray:
    f_x = _check_shape(f_x, q)
    scale = gaussian_scale(q.s2, p)
    return f_x + scale * seed.generator().standard_normal(f_x.shape)


def baseline_laplace(f_x, s1: float, epsilon: float, seed: RandomSeed) -> np.ndarray:
    f_x = matcore.as_matrix(f_x, "query answer")
    if not (math.isfinite(s1) and s1 >= 0):
        raise ParameterError("s1 must be a non-negative L1 sensitivity")
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise ParameterError("epsilon must be positive")
    return f_x + seed.generator().laplace(0.0, s1 / epsilon, f_x.shape)
