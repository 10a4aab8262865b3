"""Datasets, utility metrics, a ridge learner, and the repeated-trial experiment runner.

Three tasks are supported:

* ``regression``: release the data matrix (target row included), fit ridge on
  the release, report RMSE on a held-out split;
* ``first-pc``: release ``X X^T / n``, take its top eigenvector, report the
  captured-variance deficit against the true covariance;
* ``covariance``: release the data matrix, estimate the covariance from the
  release, report RSS over all principal components.

Every trial ``t`` draws from ``RandomSeed(seed, t)``; all mechanisms in one
experiment reuse the same trial seeds so their metrics can be compared pairwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import matcore
from .budget import (
    CovarianceQuery,
    IdentityQuery,
    Mode,
    PrivacyParams,
    QuerySpec,
    Structure,
    Theorem,
    precision_budget,
    sensitivity_catalog,
)
from .errors import ConfigError, NumericalError, ParameterError, StructureError
from .io import read_table_csv
from .mechanism import (
    MvgDesign,
    NoiseDirections,
    PrecisionAllocation,
    baseline_gaussian,
    baseline_laplace,
    binary_allocation,
    design_equimodal,
    design_unimodal,
    pnr_allocation,
    private_directions,
)
from .sampler import RandomSeed

log = logging.getLogger(__name__)

Z_95 = 1.96
DEFAULT_TAUS = (0.55, 0.65, 0.75, 0.85, 0.95)
RIDGE_LAMBDA = 1e-3
UNIT_TOL = 1e-8
DELTA_RHO_FLOOR = -1e-9

# spawn keys inside a trial stream
_NOISE_KEY = 0
_DIRECTIONS_KEY = 1
_SPLIT_KEY = 1000


# --- datasets ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """``features`` is ``m x n``: one row per feature, one column per record."""

    features: np.ndarray
    feature_names: tuple
    value_range: tuple

    def __post_init__(self):
        x = matcore.as_matrix(self.features, "features")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != x.shape[0]:
            raise ParameterError(f"{len(names)} feature names for {x.shape[0]} feature rows")
        if len(set(names)) != len(names):
            raise ParameterError("feature names must be unique")
        if x.shape[1] < 2:
            raise ParameterError("a dataset needs at least 2 records")
        lo, hi = (float(v) for v in self.value_range)
        if not hi > lo:
            raise ParameterError("value_range needs lo < hi")
        if x.min() < lo or x.max() > hi:
            raise ParameterError(f"entries fall outside value_range [{lo}, {hi}]")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "value_range", (lo, hi))

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def bound(self) -> float:
        return max(abs(self.value_range[0]), abs(self.value_range[1]))

    def index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise ConfigError(f"no feature named {name!r}") from None

    def subset(self, columns) -> "Dataset":
        return Dataset(self.features[:, columns], self.feature_names, self.value_range)


def load_csv(path, value_range=None) -> Dataset:
    """Read a header-plus-rows CSV (one row per sample).

    Without ``value_range`` the observed min/max is used, which is only
    appropriate when those limits are public knowledge.
    """
    header, body = read_table_csv(path)
    x = body.T
    if value_range is None:
        value_range = (float(x.min()), float(x.max()))
    return Dataset(x, header, value_range)


def _center_and_scale(x: np.ndarray, bound: float) -> np.ndarray:
    x = x - x.mean(axis=1, keepdims=True)
    return x * (bound / np.max(np.abs(x)))


LIVER_NAMES = ("mcv", "alkphos", "sgpt", "sgot", "gammagt", "drinks")
MOVEMENT_NAMES = ("ANC0", "ANC1", "ANC2", "ANC3")
CTG_NAMES = (
    "LB", "AC", "FM", "UC", "DL", "DS", "DP", "ASTV", "MSTV", "ALTV", "MLTV",
    "Width", "Min", "Max", "Nmax", "Nzeros", "Mode", "Mean", "Median", "Variance", "Tendency",
)


def synthetic_liver(seed: int = 0, n: int = 345) -> Dataset:
    """Blood-test shaped data; ``drinks`` depends mostly on ``sgpt``."""
    rng = RandomSeed(seed).generator()
    z = rng.standard_normal(n)
    e = rng.standard_normal((6, n))
    x = np.empty((6, n))
    x[0] = 0.3 * z + e[0]
    x[1] = 0.2 * z + e[1]
    x[2] = 0.9 * z + 0.4 * e[2]
    x[3] = 0.6 * z + 0.6 * e[3]
    x[4] = 0.7 * z + 0.5 * e[4]
    x[5] = 0.8 * x[2] + 0.2 * x[4] + 0.3 * e[5]
    return Dataset(_center_and_scale(x, 1.0), LIVER_NAMES, (-1.0, 1.0))


def synthetic_movement(seed: int = 0, n: int = 10176) -> Dataset:
    """Signal-strength shaped data; ANC0 and ANC3 share a strong common factor."""
    rng = RandomSeed(seed).generator()
    t = rng.standard_normal(n)
    e = rng.standard_normal((4, n))
    x = np.vstack([40.0 * t + 8.0 * e[0], 10.0 * e[1], 10.0 * e[2], -35.0 * t + 8.0 * e[3]])
    return Dataset(_center_and_scale(x, 100.0), MOVEMENT_NAMES, (-100.0, 100.0))


def synthetic_ctg(seed: int = 0, n: int = 2126) -> Dataset:
    """Cardiotocography shaped data in ``[0, 1]``; LB, ASTV and ALTV carry the spread."""
    rng = RandomSeed(seed).generator()
    m = len(CTG_NAMES)
    base = rng.uniform(0.2, 0.8, m)
    x = base[:, None] + 0.04 * rng.standard_normal((m, n))
    z = rng.standard_normal(n)
    for i, load in ((0, 0.12), (7, -0.15), (9, 0.13)):
        x[i] += load * z + 0.05 * rng.standard_normal(n)
    return Dataset(np.clip(x, 0.0, 1.0), CTG_NAMES, (0.0, 1.0))


SYNTHETIC = {
    "liver": synthetic_liver,
    "movement": synthetic_movement,
    "ctg": synthetic_ctg,
}


# --- queries and metrics -------------------------------------------------


def query_identity(d: Dataset) -> np.ndarray:
    return d.features


def query_covariance(d: Dataset) -> np.ndarray:
    x = d.features
    return x @ x.T / x.shape[1]


def metric_rmse(predictions, targets) -> float:
    a = np.asarray(predictions, dtype=float).reshape(-1)
    b = np.asarray(targets, dtype=float).reshape(-1)
    if a.size != b.size or a.size == 0:
        raise ParameterError(f"length mismatch: {a.size} predictions, {b.size} targets")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _top_eigen(s: np.ndarray):
    lam, vecs = np.linalg.eigh(s)
    return lam[::-1], vecs[:, ::-1]


def metric_delta_rho(v, s_bar) -> float:
    """Captured-variance deficit ``lambda_1(S) - v^T S v`` of a unit vector."""
    v = np.asarray(v, dtype=float).reshape(-1)
    s_bar = matcore.as_matrix(s_bar, "s_bar")
    if s_bar.shape != (v.size, v.size):
        raise ParameterError(f"vector of length {v.size} for a {s_bar.shape} matrix")
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ParameterError("v must be a unit vector")
    lam1 = np.linalg.eigvalsh(s_bar)[-1]
    d = float(lam1 - v @ s_bar @ v)
    if d < DELTA_RHO_FLOOR * max(1.0, abs(lam1)):
        raise NumericalError(f"captured variance exceeds the top eigenvalue by {-d:.3g}")
    return max(d, 0.0)


def metric_rss(s_tilde, s_bar) -> float:
    """Residual sum of squares of captured variance over all components."""
    s_tilde = matcore.as_matrix(s_tilde, "s_tilde")
    s_bar = matcore.as_matrix(s_bar, "s_bar")
    if s_tilde.shape != s_bar.shape or s_bar.shape[0] != s_bar.shape[1]:
        raise ParameterError(f"shape mismatch {s_tilde.shape} vs {s_bar.shape}")
    _, v = _top_eigen(0.5 * (s_tilde + s_tilde.T))
    lam = np.linalg.eigvalsh(s_bar)[::-1]
    rho = np.einsum("ij,ik,kj->j", v, s_bar, v)
    return float(np.sum((lam - rho) ** 2))


class Pnr(NamedTuple):
    pnr: float
    half_log: float


def metric_pnr(k_f, noise_cov) -> Pnr:
    """``|K_f + K_z| / |K_z|`` from log-determinants, plus ``log(PNR)/2``."""
    k_f = matcore.as_matrix(k_f, "k_f")
    noise_cov = matcore.as_spd(noise_cov, "noise_cov")
    if k_f.shape != noise_cov.shape:
        raise ParameterError(f"shape mismatch {k_f.shape} vs {noise_cov.shape}")
    if np.max(np.abs(k_f - k_f.T)) > matcore.SYMMETRY_ATOL * max(1.0, np.max(np.abs(k_f))):
        raise StructureError("k_f is not symmetric")
    if np.linalg.eigvalsh(k_f)[0] < -matcore.SPD_RTOL * max(1.0, np.max(np.abs(k_f))):
        raise StructureError("k_f is not positive semi-definite")
    sign_t, logdet_t = np.linalg.slogdet(k_f + noise_cov)
    sign_z, logdet_z = np.linalg.slogdet(noise_cov)
    if sign_t <= 0 or sign_z <= 0:
        raise StructureError("determinants must be positive")
    log_pnr = logdet_t - logdet_z
    return Pnr(float(math.exp(log_pnr)), float(0.5 * log_pnr))


def ridge_fit(features, targets, lambda_reg: float = RIDGE_LAMBDA) -> np.ndarray:
    """Ridge weights for feature-major ``features`` (``k x n``, columns are samples)."""
    f = matcore.as_matrix(features, "features").T
    y = np.asarray(targets, dtype=float).reshape(-1)
    if y.size != f.shape[0]:
        raise ParameterError(f"{y.size} targets for {f.shape[0]} samples")
    if not (math.isfinite(lambda_reg) and lambda_reg > 0):
        raise ParameterError("lambda_reg must be positive")
    a = f.T @ f + lambda_reg * np.eye(f.shape[1])
    try:
        return np.linalg.solve(a, f.T @ y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("ridge normal equations are singular") from exc


# --- trial reports -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrialReport:
    label: str
    metric: str
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size == 0:
            raise ParameterError("a report needs at least one trial")
        object.__setattr__(self, "values", v)

    @property
    def trials(self) -> int:
        return self.values.size

    @property
    def mean(self) -> float:
        return math.fsum(self.values) / self.values.size

    @property
    def ci_half_width(self) -> float:
        """Normal-approximation 95% half-width; zero for a single trial."""
        t = self.values.size
        if t < 2:
            return 0.0
        return Z_95 * float(np.std(self.values, ddof=1)) / math.sqrt(t)

    def summary(self) -> dict:
        return {
            "label": self.label,
            "metric": self.metric,
            "trials": self.trials,
            "mean": self.mean,
            "ci95": self.ci_half_width,
            **self.metadata,
        }


class PairedDifference(NamedTuple):
    mean: float
    ci_half_width: float


def paired_difference(a: TrialReport, b: TrialReport) -> PairedDifference:
    """Mean of ``a - b`` over matched trials with its 95% half-width."""
    if a.trials != b.trials:
        raise ParameterError("paired comparison needs equal trial counts")
    diff = TrialReport("diff", a.metric, a.values - b.values)
    return PairedDifference(diff.mean, diff.ci_half_width)


# --- configuration -------------------------------------------------------


class Task(str, Enum):
    REGRESSION = "regression"
    FIRST_PC = "first-pc"
    COVARIANCE = "covariance"


class MechanismKind(str, Enum):
    MVG_UNIMODAL = "mvg-unimodal"
    MVG_EQUIMODAL = "mvg-equimodal"
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    NONPRIVATE = "nonprivate"


@dataclass(frozen=True)
class StandardBasis:
    """Standard-basis directions with binary allocation toward ``indices``.

    Every ``tau`` is tried and the best mean is reported.
    """

    indices: tuple
    taus: tuple = DEFAULT_TAUS

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        if not self.taus:
            raise ConfigError("at least one tau is required")
        if any(not 0.0 < t < 1.0 for t in self.taus):
            raise ConfigError("tau must lie in (0,1)")


@dataclass(frozen=True)
class PrivateSvd:
    """Directions from a private covariance estimate, allocation by water filling."""

    frac: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.frac < 1.0:
            raise ConfigError("frac must lie in (0,1)")


@dataclass(frozen=True)
class Iid:
    """Identity directions with a uniform allocation."""


DirectionSource = Union[StandardBasis, PrivateSvd, Iid]


@dataclass(frozen=True)
class MechanismChoice:
    kind: MechanismKind
    label: Optional[str] = None
    theorem: Optional[Theorem] = None
    directions: DirectionSource = Iid()
    s1: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MechanismKind(self.kind))
        if self.theorem is not None:
            object.__setattr__(self, "theorem", Theorem(self.theorem))
        if self.label is None:
            name = self.kind.value
            if self.theorem is not None:
                name += f"-{self.theorem.value}"
            object.__setattr__(self, "label", name)

    @property
    def is_mvg(self) -> bool:
        return self.kind in (MechanismKind.MVG_UNIMODAL, MechanismKind.MVG_EQUIMODAL)


@dataclass(frozen=True)
class ExperimentConfig:
    """``delta`` may be the string ``"1/n"``, resolved against the private record count."""

    task: Task
    mechanisms: tuple
    epsilon: float
    delta: Union[float, str]
    trials: int
    seed: int
    target: Optional[str] = None
    holdout: int = 97
    ridge_lambda: float = RIDGE_LAMBDA

    def __post_init__(self):
        try:
            object.__setattr__(self, "task", Task(self.task))
        except ValueError:
            raise ConfigError(f"unknown task {self.task!r}") from None
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        if not self.mechanisms:
            raise ConfigError("configure at least one mechanism")
        labels = [c.label for c in self.mechanisms]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"mechanism labels must be unique, got {labels}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if isinstance(self.delta, str) and self.delta != "1/n":
            raise ConfigError("delta must be a number or the string '1/n'")
        try:
            RandomSeed(self.seed)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        if self.task is Task.REGRESSION and not self.target:
            raise ConfigError("regression needs a target feature name")

    def privacy(self, n: int) -> PrivacyParams:
        delta = 1.0 / n if self.delta == "1/n" else float(self.delta)
        return PrivacyParams(float(self.epsilon), delta)


# --- experiment runner ---------------------------------------------------


@dataclass(eq=False)
class _TaskContext:
    q: QuerySpec
    answer: np.ndarray
    private_x: np.ndarray
    bound: float
    s1: float
    p: PrivacyParams
    score: Callable[[np.ndarray], float]
    metric: str
    # identity releases carry n columns of signal per direction
    signal_scale: float


def _regression_context(cfg: ExperimentConfig, data: Dataset) -> _TaskContext:
    target = data.index(cfg.target)
    if not 1 <= cfg.holdout <= data.n - 2:
        raise ConfigError(f"holdout must lie in [1, {data.n - 2}]")
    perm = RandomSeed(cfg.seed).spawn(_SPLIT_KEY).generator().permutation(data.n)
    test_idx = np.sort(perm[: cfg.holdout])
    train_idx = np.sort(perm[cfg.holdout :])
    train = data.subset(train_idx)
    test = data.features[:, test_idx]
    test_x = np.delete(test, target, axis=0)
    test_y = test[target]
    lo, hi = data.value_range
    sens = sensitivity_catalog(IdentityQuery(lo, hi, train.m, train.n))
    q = QuerySpec(train.m, train.n, sens.s2, sens.gamma)

    def score(release: np.ndarray) -> float:
        feats = np.delete(release, target, axis=0)
        scale = np.sqrt(np.mean(feats * feats, axis=1))
        scale[scale == 0] = 1.0
        w = ridge_fit(feats / scale[:, None], release[target], cfg.ridge_lambda)
        return metric_rmse((test_x / scale[:, None]).T @ w, test_y)

    return _TaskContext(
        q=q,
        answer=query_identity(train),
        private_x=train.features,
        bound=train.bound,
        s1=(hi - lo) * train.m,
        p=cfg.privacy(train.n),
        score=score,
        metric="rmse",
        signal_scale=float(train.n),
    )


def _first_pc_context(cfg: ExperimentConfig, data: Dataset) -> _TaskContext:
    s_bar = query_covariance(data)
    sens = sensitivity_catalog(CovarianceQuery(data.bound, data.m, data.n))
    q = QuerySpec(data.m, data.m, sens.s2, sens.gamma, Structure.SYMMETRIC_PSD)

    def score(release: np.ndarray) -> float:
        _, v = _top_eigen(0.5 * (release + release.T))
        return metric_delta_rho(v[:, 0], s_bar)

    return _TaskContext(
        q=q,
        answer=s_bar,
        private_x=data.features,
        bound=data.bound,
        # one record moves X X^T / n by (x x^T - x' x'^T) / n
        s1=2.0 * data.m**2 * data.bound**2 / data.n,
        p=cfg.privacy(data.n),
        score=score,
        metric="delta_rho",
        signal_scale=1.0,
    )


def _covariance_context(cfg: ExperimentConfig, data: Dataset) -> _TaskContext:
    s_bar = query_covariance(data)
    lo, hi = data.value_range
    sens = sensitivity_catalog(IdentityQuery(lo, hi, data.m, data.n))
    q = QuerySpec(data.m, data.n, sens.s2, sens.gamma)
    n = data.n

    def score(release: np.ndarray) -> float:
        return metric_rss(release @ release.T / n, s_bar)

    return _TaskContext(
        q=q,
        answer=query_identity(data),
        private_x=data.features,
        bound=data.bound,
        s1=(hi - lo) * data.m,
        p=cfg.privacy(data.n),
        score=score,
        metric="rss",
        signal_scale=float(data.n),
    )


_CONTEXTS = {
    Task.REGRESSION: _regression_context,
    Task.FIRST_PC: _first_pc_context,
    Task.COVARIANCE: _covariance_context,
}


def _validate_choice(choice: MechanismChoice, task: Task, m: int) -> None:
    square = task is Task.FIRST_PC
    if choice.kind is MechanismKind.MVG_UNIMODAL:
        if square:
            raise ConfigError("unimodal noise needs a general query; first-pc releases a PSD covariance")
        if choice.theorem is Theorem.PSD:
            raise ConfigError("unimodal noise is certified by the general theorem only")
    if choice.kind is MechanismKind.MVG_EQUIMODAL and not square:
        raise ConfigError(f"equi-modal noise needs a square query; task {task.value} is not square")
    if choice.theorem is not None and not choice.is_mvg:
        raise ConfigError(f"{choice.kind.value} takes no theorem")
    if not isinstance(choice.directions, Iid) and not choice.is_mvg:
        raise ConfigError(f"{choice.kind.value} takes no noise directions")
    if isinstance(choice.directions, StandardBasis):
        if any(not 0 <= i < m for i in choice.directions.indices):
            raise ConfigError(f"basis indices must lie in [0, {m})")
    if choice.s1 is not None and not (math.isfinite(choice.s1) and choice.s1 >= 0):
        raise ConfigError("s1 must be non-negative")


def _design(choice, q, p, dirs, alloc) -> MvgDesign:
    if choice.kind is MechanismKind.MVG_UNIMODAL:
        return design_unimodal(q, p, dirs, alloc)
    theorem = choice.theorem or (Theorem.PSD if q.is_psd else Theorem.GENERAL)
    return design_equimodal(q, p, dirs, alloc, theorem)


def signal_allocation(eigenvalues, scale: float, budget: float) -> PrecisionAllocation:
    """Water-filling allocation from (possibly noisy) covariance eigenvalues times ``scale``."""
    # noisy eigenvalues can be negative; floor them to keep water filling defined
    lam = np.asarray(eigenvalues, dtype=float) * scale
    top = float(np.max(np.abs(lam)))
    if top == 0.0:
        return PrecisionAllocation.uniform(lam.size)
    return pnr_allocation(np.maximum(lam, 1e-12 * top), budget)


class _Runner:
    """Turns one mechanism choice into ``release(trial_seed) -> matrix`` callables."""

    def __init__(self, ctx: _TaskContext, choice: MechanismChoice):
        self.ctx = ctx
        self.choice = choice

    def variants(self) -> list[tuple[dict, Callable[[RandomSeed], np.ndarray]]]:
        ctx, choice = self.ctx, self.choice
        kind = choice.kind
        if kind is MechanismKind.NONPRIVATE:
            return [({}, lambda seed: ctx.answer)]
        if kind is MechanismKind.GAUSSIAN:
            return [({}, lambda seed: baseline_gaussian(ctx.answer, ctx.q, ctx.p, seed.spawn(_NOISE_KEY)))]
        if kind is MechanismKind.LAPLACE:
            s1 = ctx.s1 if choice.s1 is None else choice.s1
            return [
                (
                    {"s1": s1},
                    lambda seed: baseline_laplace(ctx.answer, s1, ctx.p.epsilon, seed.spawn(_NOISE_KEY)),
                )
            ]
        src = choice.directions
        m = ctx.q.m
        if isinstance(src, Iid):
            design = _design(choice, ctx.q, ctx.p, NoiseDirections.identity(m), PrecisionAllocation.uniform(m))
            return [(self._design_meta(design), self._fixed(design))]
        if isinstance(src, StandardBasis):
            out = []
            for tau in src.taus:
                alloc = binary_allocation(m, src.indices, tau)
                design = _design(choice, ctx.q, ctx.p, NoiseDirections.identity(m), alloc)
                out.append(({"tau": tau, **self._design_meta(design)}, self._fixed(design)))
            return out
        # private directions: budget is spent per trial, so compile per trial
        remaining = PrivacyParams((1 - src.frac) * ctx.p.epsilon, (1 - src.frac) * ctx.p.delta)
        mode = Mode.UNIMODAL if kind is MechanismKind.MVG_UNIMODAL else Mode.EQUIMODAL
        theorem = None
        if mode is Mode.EQUIMODAL:
            theorem = choice.theorem or (Theorem.PSD if ctx.q.is_psd else Theorem.GENERAL)
        budget = precision_budget(ctx.q, remaining, mode, theorem)

        def release(seed: RandomSeed) -> np.ndarray:
            pd = private_directions(ctx.private_x, src.frac, ctx.p, seed.spawn(_DIRECTIONS_KEY), ctx.bound)
            alloc = signal_allocation(pd.eigenvalues, ctx.signal_scale, budget)
            design = _design(choice, ctx.q, pd.remaining, pd.dirs, alloc)
            return design.perturb(ctx.answer, seed.spawn(_NOISE_KEY)).value

        return [({"frac": src.frac, "budget": budget}, release)]

    def _fixed(self, design: MvgDesign):
        answer = self.ctx.answer
        return lambda seed: design.perturb(answer, seed.spawn(_NOISE_KEY)).value

    @staticmethod
    def _design_meta(design: MvgDesign) -> dict:
        return {
            "budget": design.budget,
            "budget_spent": design.budget_spent,
            "theorem": design.theorem.value,
            "condition_holds": design.condition_report.holds,
        }


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    config: ExperimentConfig
    reports: tuple
    dataset: dict

    def report(self, label: str) -> TrialReport:
        for r in self.reports:
            if r.label == label:
                return r
        raise KeyError(label)


def _prepare(cfg: ExperimentConfig, data: Dataset):
    for choice in cfg.mechanisms:
        _validate_choice(choice, cfg.task, data.m)
    try:
        ctx = _CONTEXTS[cfg.task](cfg, data)
        runners = [(choice, _Runner(ctx, choice).variants()) for choice in cfg.mechanisms]
    except (ParameterError, StructureError) as exc:
        raise ConfigError(f"configuration does not fit the data: {exc}") from exc
    return ctx, runners


def run_experiment(cfg: ExperimentConfig, data: Dataset) -> ExperimentResult:
    """Run every configured mechanism for ``cfg.trials`` paired trials.

    All validation and design compilation happen before the first trial.
    For a tau sweep the variant with the lowest mean is reported and the
    per-tau means are kept in the metadata.
    """
    ctx, runners = _prepare(cfg, data)
    seeds = [RandomSeed(cfg.seed, t) for t in range(cfg.trials)]
    reports = []
    for choice, variants in runners:
        best = None
        sweep = []
        for meta, release in variants:
            values = np.array([ctx.score(release(s)) for s in seeds])
            rep = TrialReport(choice.label, ctx.metric, values, dict(meta))
            sweep.append((meta.get("tau"), rep.mean))
            if best is None or rep.mean < best.mean:
                best = rep
        if len(variants) > 1:
            best.metadata["tau_sweep"] = [[t, mu] for t, mu in sweep]
        log.info("%s: mean %s = %.6g +- %.3g", best.label, best.metric, best.mean, best.ci_half_width)
        reports.append(best)
    info = {"m": data.m, "n": data.n, "value_range": list(data.value_range),
            "epsilon": ctx.p.epsilon, "delta": ctx.p.delta, "query": [ctx.q.m, ctx.q.n],
            "s2": ctx.q.s2, "gamma": ctx.q.gamma}
    return ExperimentResult(cfg, tuple(reports), info)


class StudyCell(NamedTuple):
    label: str
    epsilon: float
    report: TrialReport


def direction_study(
    cfg: ExperimentConfig,
    data: Dataset,
    sources: Mapping[str, DirectionSource],
    epsilons: Sequence[float],
) -> list[StudyCell]:
    """One report per (direction source, epsilon), all cells on the same trial seeds.

    The first MVG mechanism of ``cfg`` is the template whose directions are varied.
    """
    if len(sources) < 2:
        raise ConfigError("a direction study needs at least two direction choices")
    if not epsilons:
        raise ConfigError("a direction study needs at least one epsilon")
    template = next((c for c in cfg.mechanisms if c.is_mvg), None)
    if template is None:
        raise ConfigError("a direction study needs an MVG mechanism in the config")
    cells = []
    for eps in epsilons:
        for label, src in sources.items():
            choice = replace(template, label=label, directions=src)
            sub = replace(cfg, mechanisms=(choice,), epsilon=float(eps))
            cells.append(StudyCell(label, float(eps), run_experiment(sub, data).reports[0]))
    return cells


# --- stock configurations ------------------------------------------------


def default_config(task, trials: int = 100, seed: int = 0, epsilon: float = 1.0) -> tuple[ExperimentConfig, str]:
    """Stock mechanism line-up per task and the synthetic dataset it runs on."""
    task = Task(task)
    if task is Task.REGRESSION:
        mechs = (
            MechanismChoice(MechanismKind.NONPRIVATE),
            MechanismChoice(MechanismKind.MVG_UNIMODAL, "mvg-binary", directions=StandardBasis((2, 5))),
            MechanismChoice(MechanismKind.MVG_UNIMODAL, "mvg-pnr", directions=PrivateSvd(0.2)),
            MechanismChoice(MechanismKind.GAUSSIAN),
            MechanismChoice(MechanismKind.LAPLACE),
        )
        return ExperimentConfig(task, mechs, epsilon, "1/n", trials, seed, target="drinks"), "liver"
    if task is Task.FIRST_PC:
        mechs = (
            MechanismChoice(MechanismKind.MVG_EQUIMODAL, "mvg-psd", Theorem.PSD, StandardBasis((0, 3))),
            MechanismChoice(MechanismKind.MVG_EQUIMODAL, "mvg-general", Theorem.GENERAL, StandardBasis((0, 3))),
            MechanismChoice(MechanismKind.GAUSSIAN),
            MechanismChoice(MechanismKind.LAPLACE),
        )
        return ExperimentConfig(task, mechs, epsilon, "1/n", trials, seed), "movement"
    mechs = (
        MechanismChoice(MechanismKind.MVG_UNIMODAL, "mvg-binary", directions=StandardBasis((0, 7, 9))),
        MechanismChoice(MechanismKind.GAUSSIAN),
        MechanismChoice(MechanismKind.LAPLACE),
    )
    return ExperimentConfig(task, mechs, epsilon, "1/n", trials, seed), "ctg"


def _direction_from_dict(d) -> DirectionSource:
    if d is None:
        return Iid()
    if isinstance(d, str):
        d = {"kind": d}
    kind = d.get("kind", "iid")
    if kind == "iid":
        return Iid()
    if kind == "basis":
        return StandardBasis(tuple(d["indices"]), tuple(d.get("taus", DEFAULT_TAUS)))
    if kind == "private-svd":
        return PrivateSvd(float(d.get("frac", 0.2)))
    raise ConfigError(f"unknown direction source {kind!r}")


def config_from_dict(d: dict, data: Optional[Dataset] = None) -> ExperimentConfig:
    """Build a config from a parsed JSON document.

    Basis indices may be given as feature names when ``data`` is supplied.
    """
    try:
        mechs = []
        for md in d["mechanisms"]:
            src = md.get("directions")
            if isinstance(src, dict) and "indices" in src and data is not None:
                src = dict(src, indices=[data.index(i) if isinstance(i, str) else int(i) for i in src["indices"]])
            mechs.append(
                MechanismChoice(
                    kind=MechanismKind(md["kind"]),
                    label=md.get("label"),
                    theorem=md.get("theorem"),
                    directions=_direction_from_dict(src),
                    s1=md.get("s1"),
                )
            )
        return ExperimentConfig(
            task=d["task"],
            mechanisms=tuple(mechs),
            epsilon=float(d.get("epsilon", 1.0)),
            delta=d.get("delta", "1/n"),
            trials=int(d.get("trials", 100)),
            seed=int(d["seed"]),
            target=d.get("target"),
            holdout=int(d.get("holdout", 97)),
            ridge_lambda=float(d.get("ridge_lambda", RIDGE_LAMBDA)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment config: {exc!r}") from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def src(s):
        if isinstance(s, StandardBasis):
            return {"kind": "basis", "indices": list(s.indices), "taus": list(s.taus)}
        if isinstance(s, PrivateSvd):
            return {"kind": "private-svd", "frac": s.frac}
        return {"kind": "iid"}

    return {
        "task": cfg.task.value,
        "mechanisms": [
            {
                "kind": c.kind.value,
                "label": c.label,
                "theorem": None if c.theorem is None else c.theorem.value,
                "directions": src(c.directions),
                "s1": c.s1,
            }
            for c in cfg.mechanisms
        ],
        "epsilon": cfg.epsilon,
        "delta": cfg.delta,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "target": cfg.target,
        "holdout": cfg.holdout,
        "ridge_lambda": cfg.ridge_lambda,
    }
