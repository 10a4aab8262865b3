"""Privacy calculus for the matrix-variate Gaussian mechanism.

Covers the alpha/beta/omega terms, the general and PSD sufficient conditions,
precision budgets for unimodal and equi-modal directional noise, and the
closed-form sensitivities of the query catalog.

Both bounds are the squared positive root of a quadratic
``a*phi**2 + beta*phi - 2*eps <= 0``. They are evaluated in the cancellation-free
form ``phi = 4*eps / (beta + sqrt(beta**2 + 8*a*eps))``: in realistic settings
``beta**2`` exceeds ``8*a*eps`` by many orders of magnitude and the textbook
form ``(-beta + sqrt(...)) / (2a)`` loses every significant digit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Union

import numpy as np

from . import matcore
from .errors import ParameterError, StructureError

# Relative slack under which an exactly-at-the-boundary design still holds.
HOLD_RTOL = 1e-12
PSD_EQUAL_ATOL = 1e-10


class Structure(str, Enum):
    GENERAL = "general"
    SYMMETRIC_PSD = "psd"


class Theorem(str, Enum):
    """Which sufficient condition certifies a design."""

    GENERAL = "general"
    PSD = "psd"


class Mode(str, Enum):
    UNIMODAL = "unimodal"
    EQUIMODAL = "equimodal"


class PsdReason(str, Enum):
    SENSITIVITY_LEQ_GAMMA = "SensitivityLeqGamma"
    RANK_GT_12 = "RankGt12"
    NEITHER = "Neither"


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ParameterError("epsilon must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ParameterError("delta must lie in (0,1)")


@dataclass(frozen=True)
class QuerySpec:
    """Shape and sensitivity data of a matrix-valued query.

    ``s2`` is the L2 (Frobenius) sensitivity and ``gamma`` the supremum of the
    query's Frobenius norm. ``s2 == 0`` is allowed so that a constant query
    can pass through the baselines unchanged.
    """

    m: int
    n: int
    s2: float
    gamma: float
    structure: Structure = Structure.GENERAL

    def __post_init__(self):
        object.__setattr__(self, "structure", Structure(self.structure))
        if int(self.m) != self.m or int(self.n) != self.n or self.m < 1 or self.n < 1:
            raise ParameterError(f"m and n must be positive integers, got {self.m}x{self.n}")
        if not (math.isfinite(self.s2) and self.s2 >= 0):
            raise ParameterError("s2 must be a non-negative finite number")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ParameterError("gamma must be positive")
        if self.structure is Structure.SYMMETRIC_PSD:
            if self.m != self.n:
                raise StructureError("a symmetric PSD query must be square")
            if self.s2 > math.sqrt(2.0) * self.gamma * (1 + 1e-12):
                raise ParameterError("PSD queries satisfy s2 <= sqrt(2)*gamma")
        elif self.s2 > 2.0 * self.gamma * (1 + 1e-12):
            raise ParameterError("s2 cannot exceed 2*gamma (triangle inequality)")

    @property
    def r(self) -> int:
        return min(self.m, self.n)

    @property
    def is_psd(self) -> bool:
        return self.structure is Structure.SYMMETRIC_PSD


@dataclass(frozen=True)
class BudgetTerms:
    r: int
    h_r: float
    h_r_half: float
    zeta: float
    alpha: float
    beta: float
    omega: Optional[float] = None


class ConditionReport(NamedTuple):
    holds: bool
    lhs: float
    rhs: float


class PsdPreference(NamedTuple):
    preferred: bool
    reason: PsdReason


def budget_terms(q: QuerySpec, p: PrivacyParams) -> BudgetTerms:
    r = q.r
    h_r = matcore.harmonic(r, 1)
    h_half = matcore.harmonic(r, 0.5)
    alpha = (h_r + h_half) * q.gamma**2 + 2.0 * h_r * q.gamma * q.s2
    if q.is_psd:
        # m = n = r, so (mn)^(1/4) collapses to r^(1/2) and zeta takes r x r.
        z = matcore.zeta(p.delta, r, r)
        beta = 2.0 * math.sqrt(r) * z * h_r * q.s2
        omega = 4.0 * h_r * q.gamma * q.s2
    else:
        z = matcore.zeta(p.delta, q.m, q.n)
        beta = 2.0 * (float(q.m) * q.n) ** 0.25 * z * h_r * q.s2
        omega = None
    return BudgetTerms(r=r, h_r=h_r, h_r_half=h_half, zeta=z, alpha=alpha, beta=beta, omega=omega)


def _root_squared(a: float, beta: float, eps: float) -> float:
    disc = math.sqrt(beta * beta + 8.0 * a * eps)
    denom = beta + disc
    if denom == 0.0:
        return math.inf
    phi = 4.0 * eps / denom
    return phi * phi


def general_bound(t: BudgetTerms, p: PrivacyParams) -> float:
    """Upper limit on ``||sigma(Sigma^-1)||_2 * ||sigma(Psi^-1)||_2``."""
    return _root_squared(t.alpha, t.beta, p.epsilon)


def psd_bound(t: BudgetTerms, p: PrivacyParams) -> float:
    """Upper limit on ``||sigma(Sigma^-1)||_2 ** 2`` when ``Psi == Sigma``."""
    if t.omega is None:
        raise StructureError("psd_bound requires terms built from a symmetric PSD query")
    return _root_squared(t.omega, t.beta, p.epsilon)


def _resolve_theorem(q: QuerySpec, theorem) -> Theorem:
    if theorem is None:
        return Theorem.PSD if q.is_psd else Theorem.GENERAL
    theorem = Theorem(theorem)
    if theorem is Theorem.PSD and not q.is_psd:
        raise StructureError("the PSD condition needs a symmetric PSD query")
    return theorem


def _inverse_norm(cov: np.ndarray) -> float:
    # Singular values of an SPD inverse are reciprocals of its eigenvalues.
    eig = np.clip(matcore.spd_eigvals(cov), 0.0, None)
    with np.errstate(divide="ignore"):
        inv = 1.0 / eig
    return float(np.sqrt(np.sum(inv * inv)))


def check_sufficient(sigma, psi, q: QuerySpec, p: PrivacyParams, theorem=None) -> ConditionReport:
    """Evaluate the sufficient condition for a concrete ``(Sigma, Psi)`` pair.

    ``theorem`` defaults to PSD for PSD queries and general otherwise.
    """
    sigma = matcore.as_spd(sigma, "sigma")
    psi = matcore.as_spd(psi, "psi")
    if sigma.shape != (q.m, q.m) or psi.shape != (q.n, q.n):
        raise ParameterError(
            f"covariances {sigma.shape}/{psi.shape} do not match a {q.m}x{q.n} query"
        )
    theorem = _resolve_theorem(q, theorem)
    t = budget_terms(q, p)
    if theorem is Theorem.PSD:
        scale = max(1.0, float(np.max(np.abs(sigma))))
        if np.max(np.abs(psi - sigma)) > PSD_EQUAL_ATOL * scale:
            raise StructureError("the PSD condition requires psi == sigma")
        norm = _inverse_norm(sigma)
        lhs = norm * norm
        rhs = psd_bound(t, p)
    else:
        lhs = _inverse_norm(sigma) * _inverse_norm(psi)
        rhs = general_bound(t, p)
    return ConditionReport(holds=bool(lhs <= rhs * (1.0 + HOLD_RTOL)), lhs=lhs, rhs=rhs)


def precision_budget(q: QuerySpec, p: PrivacyParams, mode, theorem=None) -> float:
    """Cap ``P`` on ``sum_i 1/sigma_i(Sigma)**2`` for directional noise.

    Unimodal noise fixes ``Psi = I_n``; squaring the general condition with
    ``||sigma(I_n^-1)||_2 = sqrt(n)`` decouples the directions and gives
    ``bound**2 / n``. Equi-modal noise fixes ``Psi = Sigma``, and the bound of
    the selected theorem applies to the sum directly.
    """
    mode = Mode(mode)
    t = budget_terms(q, p)
    if mode is Mode.UNIMODAL:
        if q.is_psd:
            raise StructureError("unimodal noise is certified by the general condition only")
        if theorem is not None and Theorem(theorem) is not Theorem.GENERAL:
            raise StructureError("unimodal noise is certified by the general condition only")
        b = general_bound(t, p)
        return b * b / q.n
    if q.m != q.n:
        raise StructureError("equi-modal noise requires a square query")
    if _resolve_theorem(q, theorem) is Theorem.PSD:
        return psd_bound(t, p)
    return general_bound(t, p)


def psd_preference(s2: float, gamma: float, r: int) -> PsdPreference:
    """Scalar rule behind :func:`prefer_psd_theorem`.

    Either clause guarantees ``alpha >= omega``: ``s2 <= gamma`` directly, and
    ``r > 12`` because ``H_{r,1/2} >= (2*sqrt(2) - 1) * H_r`` from ``r = 13`` on.
    """
    if s2 <= gamma:
        return PsdPreference(True, PsdReason.SENSITIVITY_LEQ_GAMMA)
    if r > 12:
        return PsdPreference(True, PsdReason.RANK_GT_12)
    return PsdPreference(False, PsdReason.NEITHER)


def prefer_psd_theorem(q: QuerySpec) -> PsdPreference:
    if not q.is_psd:
        raise StructureError("the comparison only applies to symmetric PSD queries")
    return psd_preference(q.s2, q.gamma, q.r)


# --- query catalog -------------------------------------------------------


@dataclass(frozen=True)
class IdentityQuery:
    """``f(X) = X`` with every entry in ``[lo, hi]``; ``m`` features, ``n`` records."""

    lo: float
    hi: float
    m: int
    n: int = 1


@dataclass(frozen=True)
class CovarianceQuery:
    """``f(X) = X X^T / n`` with entries in ``[-c, c]``."""

    c: float
    m: int
    n: int


@dataclass(frozen=True)
class KernelQuery:
    """``n x n`` kernel matrix whose kernel values are bounded by ``c``."""

    c: float
    n: int


class Sensitivity(NamedTuple):
    s2: float
    gamma: float


CatalogQuery = Union[IdentityQuery, CovarianceQuery, KernelQuery]


def sensitivity_catalog(query: CatalogQuery) -> Sensitivity:
    if isinstance(query, IdentityQuery):
        if not query.hi > query.lo:
            raise ParameterError("identity query needs hi > lo")
        if query.m < 1 or query.n < 1:
            raise ParameterError("identity query needs positive dimensions")
        # One record is one column: m entries each move by at most hi - lo.
        s2 = (query.hi - query.lo) * math.sqrt(query.m)
        gamma = max(abs(query.lo), abs(query.hi)) * math.sqrt(query.m * query.n)
        return Sensitivity(s2, gamma)
    if isinstance(query, CovarianceQuery):
        if query.c <= 0 or query.m < 1 or query.n < 1:
            raise ParameterError("covariance query needs c > 0 and positive dimensions")
        return Sensitivity(2.0 * query.m * query.c**2 / query.n, query.m * query.c**2)
    if isinstance(query, KernelQuery):
        if query.c <= 0 or query.n < 1:
            raise ParameterError("kernel query needs c > 0 and n >= 1")
        return Sensitivity(query.c * math.sqrt(8.0 * query.n - 4.0), query.n * query.c)
    raise ParameterError(f"unknown catalog query {query!r}")
