"""Reproducible draws from the zero-mean matrix-variate Gaussian MVG(0, Sigma, Psi).

Two constructions are provided:

* affine: ``Z = B_Sigma N B_Psi^T`` with ``N`` i.i.d. standard normal, and
* vectorized: ``vec(Z) ~ N(0, Psi kron Sigma)`` with column-major ``vec``.

Randomness comes from a counter-based Philox generator keyed by
``(seed, stream)``, so independent trials can be drawn in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from . import matcore
from .errors import ParameterError, SizeError

VECTORIZED_CAP = 4096
_U64 = 1 << 64


@dataclass(frozen=True)
class RandomSeed:
    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v < _U64:
                raise ParameterError(f"{name} must be an unsigned 64-bit integer, got {v}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream: int) -> "RandomSeed":
        """Same seed, different sub-stream."""
        return RandomSeed(self.seed, stream)

    def spawn(self, key: int) -> "RandomSeed":
        """Derive an independent seed for the ``key``-th consumer inside this stream."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), int(key)))
        hi, lo = ss.generate_state(2, dtype=np.uint32)
        return RandomSeed((int(hi) << 32) | int(lo), 0)


@dataclass(frozen=True, eq=False)
class MvgSpec:
    sigma: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma", matcore.as_spd(self.sigma, "sigma"))
        object.__setattr__(self, "psi", matcore.as_spd(self.psi, "psi"))

    @property
    def m(self) -> int:
        return self.sigma.shape[0]

    @property
    def n(self) -> int:
        return self.psi.shape[0]

    @cached_property
    def sigma_root(self) -> np.ndarray:
        return matcore.spd_sqrt(self.sigma)

    @cached_property
    def psi_root(self) -> np.ndarray:
        return matcore.spd_sqrt(self.psi)

    @cached_property
    def vec_root(self) -> np.ndarray:
        # a Kronecker product of validated SPD factors is SPD
        return matcore.spd_sqrt(self.covariance(), validate=False)

    def covariance(self) -> np.ndarray:
        """Covariance of ``vec(Z)``."""
        return matcore.kron(self.psi, self.sigma)


class Method(str, Enum):
    AFFINE = "affine"
    VECTORIZED = "vectorized"


def _draw_shape(shape, size):
    return shape if size is None else (int(size),) + tuple(shape)


def sample_affine(spec: MvgSpec, seed: RandomSeed, size: int | None = None) -> np.ndarray:
    """One ``m x n`` draw, or ``size`` stacked draws when ``size`` is given."""
    rng = seed.generator()
    noise = rng.standard_normal(_draw_shape((spec.m, spec.n), size))
    return _right_apply(_left_apply(spec.sigma_root, noise), spec.psi_root.T)


# Diagonal roots (i.i.d. modes) scale rows or columns instead of a dense product.
def _left_apply(b: np.ndarray, z: np.ndarray) -> np.ndarray:
    if matcore.is_diagonal(b):
        return np.diagonal(b)[:, None] * z
    return b @ z


def _right_apply(z: np.ndarray, b: np.ndarray) -> np.ndarray:
    if matcore.is_diagonal(b):
        return z * np.diagonal(b)
    return z @ b


def sample_vectorized(
    spec: MvgSpec, seed: RandomSeed, size: int | None = None, cap: int = VECTORIZED_CAP
) -> np.ndarray:
    mn = spec.m * spec.n
    if mn > cap:
        raise SizeError(
            f"vectorized sampling needs a {mn}x{mn} covariance (cap {cap}); use sample_affine"
        )
    rng = seed.generator()
    flat = rng.standard_normal(_draw_shape((mn,), size))
    root = spec.vec_root
    vec = flat @ root.T
    if size is None:
        return vec.reshape((spec.m, spec.n), order="F")
    return vec.reshape((int(size), spec.n, spec.m)).transpose(0, 2, 1)


def choose_method(m: int, n: int, cap: int = VECTORIZED_CAP) -> Method:
    """Cheaper sampler by cost estimate; ties and over-cap shapes go to affine."""
    affine_cost = max(m, n) ** 3
    vectorized_cost = (m * n) ** 2
    if vectorized_cost < affine_cost and m * n <= cap:
        return Method.VECTORIZED
    return Method.AFFINE


def sample_auto(spec: MvgSpec, seed: RandomSeed, size: int | None = None) -> np.ndarray:
    if choose_method(spec.m, spec.n) is Method.VECTORIZED:
        return sample_vectorized(spec, seed, size)
    return sample_affine(spec, seed, size)
