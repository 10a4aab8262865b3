import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvgdp.budget import Mode, PrivacyParams, QuerySpec, Theorem, precision_budget
from mvgdp.errors import AllocationError, ParameterError, StructureError
from mvgdp.mechanism import (
    NoiseDirections,
    PrecisionAllocation,
    baseline_gaussian,
    baseline_laplace,
    binary_allocation,
    compile_covariance,
    design_equimodal,
    design_unimodal,
    gaussian_scale,
    max_pnr_covariance,
    mvg_equimodal,
    mvg_unimodal,
    pnr_allocation,
    private_directions,
    waterfill_allocation,
)
from mvgdp.sampler import RandomSeed


def rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def random_orthonormal(rng, m):
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return q


def test_directions_and_allocation_validation():
    with pytest.raises(ParameterError):
        NoiseDirections(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(AllocationError):
        PrecisionAllocation([0.5, 0.0])
    with pytest.raises(AllocationError):
        PrecisionAllocation([0.6, 0.6])
    assert PrecisionAllocation([0.3, 0.3]).total == pytest.approx(0.6)


def test_binary_allocation():
    a = binary_allocation(6, [2, 5], 0.75)
    assert a.theta[2] == a.theta[5] == 0.375
    assert a.theta[0] == pytest.approx(0.0625)
    assert a.total == pytest.approx(1.0)
    assert np.allclose(binary_allocation(3, [], 0.9).theta, 1 / 3)
    with pytest.raises(ParameterError):
        binary_allocation(3, [0], 1.0)


def test_compile_equal_allocation():
    p = 7.0
    sigma = compile_covariance(NoiseDirections.identity(2), PrecisionAllocation([0.5, 0.5]), p)
    assert np.allclose(sigma, math.sqrt(2 / p) * np.eye(2), rtol=1e-15)
    assert np.sum(1 / np.linalg.eigvalsh(sigma) ** 2) == pytest.approx(p, rel=1e-12)


def test_compile_plugin_and_rotation():
    alloc = PrecisionAllocation([0.8, 0.2])
    sigma = compile_covariance(NoiseDirections.identity(2), alloc, 1.0)
    assert np.allclose(sigma, np.diag([1 / math.sqrt(0.8), 1 / math.sqrt(0.2)]), rtol=1e-15)
    w = rotation(math.pi / 4)
    rot = compile_covariance(NoiseDirections(w), alloc, 1.0)
    lam, vecs = np.linalg.eigh(rot)
    assert np.allclose(lam, sorted([1 / math.sqrt(0.8), 1 / math.sqrt(0.2)]), rtol=1e-12)
    # eigenvector of the smaller variance is the first W column
    assert abs(abs(vecs[:, 0] @ w[:, 0]) - 1) < 1e-12


def test_compile_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        compile_covariance(NoiseDirections.identity(2), PrecisionAllocation.uniform(2), 0.0)
    with pytest.raises(AllocationError):
        compile_covariance(NoiseDirections.identity(3), PrecisionAllocation.uniform(2), 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_direction_invariance_of_privacy(m, seed):
    rng = np.random.default_rng(seed)
    theta = rng.dirichlet(np.ones(m))
    theta = np.clip(theta, 1e-6, None)
    alloc = PrecisionAllocation(theta / theta.sum())
    q, p = QuerySpec(m, 3, 0.5, 1.0), PrivacyParams(1.0, 1e-3)
    d1 = design_unimodal(q, p, NoiseDirections(random_orthonormal(rng, m)), alloc)
    d2 = design_unimodal(q, p, NoiseDirections(random_orthonormal(rng, m)), alloc)
    s1 = np.sort(np.linalg.svd(d1.sigma, compute_uv=False))
    s2 = np.sort(np.linalg.svd(d2.sigma, compute_uv=False))
    assert np.allclose(s1, s2, rtol=1e-9)
    assert d1.condition_report.lhs == pytest.approx(d2.condition_report.lhs, rel=1e-9)


def test_unimodal_near_zero_noise_limit():
    rng = np.random.default_rng(0)
    f_x = rng.uniform(-1, 1, (6, 248))
    q = QuerySpec(6, 248, 2 * math.sqrt(6), math.sqrt(6 * 248))
    dirs, alloc = NoiseDirections.identity(6), PrecisionAllocation.uniform(6)
    noise = {}
    for eps in (1e6, 1e9):
        out = mvg_unimodal(f_x, q, PrivacyParams(eps, 1e-3), dirs, alloc, RandomSeed(1))
        noise[eps] = np.linalg.norm(out.value - f_x)
    # at eps = 1e6 the beta^2 term still rivals 8*alpha*eps, so the limit needs more
    assert noise[1e9] < 0.05 * np.linalg.norm(f_x)
    assert noise[1e9] < noise[1e6]
    assert out.condition_report.holds
    assert out.budget_spent == pytest.approx(out.budget, rel=1e-9)
    assert np.array_equal(out.psi, np.eye(248))


def test_equimodal_branches():
    f_x = np.eye(4)
    q = QuerySpec(4, 4, 0.5, 1.0, "psd")
    p = PrivacyParams(1.0, 1e-2)
    dirs, alloc = NoiseDirections.identity(4), PrecisionAllocation.uniform(4)
    out_psd = mvg_equimodal(f_x, q, p, dirs, alloc, Theorem.PSD, RandomSeed(1))
    out_gen = mvg_equimodal(f_x, q, p, dirs, alloc, Theorem.GENERAL, RandomSeed(1))
    assert out_psd.theorem is Theorem.PSD and out_gen.theorem is Theorem.GENERAL
    assert out_psd.budget == pytest.approx(precision_budget(q, p, Mode.EQUIMODAL, Theorem.PSD))
    assert out_psd.budget > out_gen.budget  # s2 <= gamma favours the PSD route
    assert np.array_equal(out_psd.sigma, out_psd.psi)
    with pytest.raises(StructureError):
        design_equimodal(QuerySpec(4, 4, 0.5, 1.0), p, dirs, alloc, Theorem.PSD)
    with pytest.raises(StructureError):
        design_unimodal(q, p, dirs, alloc)


def test_perturb_shape_check():
    q = QuerySpec(2, 3, 0.5, 1.0)
    design = design_unimodal(q, PrivacyParams(1.0, 0.1), NoiseDirections.identity(2), PrecisionAllocation.uniform(2))
    with pytest.raises(ParameterError):
        design.perturb(np.zeros((3, 2)), RandomSeed(0))


# --- water filling -------------------------------------------------------


def test_waterfill_examples():
    wf = waterfill_allocation([1.0, 1.0], 2.0)
    assert wf.c == pytest.approx(2.0) and np.allclose(wf.lambda_z_inv, [1, 1])
    wf = waterfill_allocation([1.0, 0.5], 5.0)
    assert wf.c == pytest.approx(4.0) and np.allclose(wf.lambda_z_inv, [3, 2])
    wf = waterfill_allocation([1.0, 0.01], 1.0)
    assert wf.c == pytest.approx(2.0)
    assert np.allclose(wf.lambda_z_inv, [1, 0]) and list(wf.active) == [True, False]
    with pytest.raises(ParameterError):
        waterfill_allocation([1.0], 0.0)


def brute_force_waterfill(lam, d):
    floor = 1 / np.asarray(lam)
    best = None
    for k in range(1, len(lam) + 1):
        for subset in itertools.combinations(range(len(lam)), k):
            idx = list(subset)
            c = (d + floor[idx].sum()) / k
            x = np.zeros(len(lam))
            x[idx] = c - floor[idx]
            if np.all(x >= 0):
                obj = np.sum(np.log(x + floor))
                if best is None or obj > best[0]:
                    best = (obj, x)
    return best[1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=5), st.floats(0.01, 50))
def test_waterfill_matches_subset_search(lam, d):
    wf = waterfill_allocation(lam, d)
    assert math.fsum(wf.lambda_z_inv) == pytest.approx(d, rel=1e-9)
    assert np.all(wf.lambda_z_inv >= 0)
    assert np.allclose(wf.lambda_z_inv, brute_force_waterfill(lam, d), rtol=1e-7, atol=1e-9 * d)


def test_waterfill_tiny_budget_keeps_one_direction():
    wf = waterfill_allocation([3.0, 2.0, 1.0], 1e-23)
    assert wf.active.tolist() == [True, False, False]
    assert wf.lambda_z_inv[0] == 1e-23


def test_max_pnr_covariance():
    k_f = np.diag([4.0, 1.0])
    design = max_pnr_covariance(k_f, budget=5.0)
    # floors (1/4, 1): c = (5 + 1.25) / 2
    assert design.c == pytest.approx(3.125)
    assert np.allclose(1 / design.variances, [2.875, 2.125])
    assert design.floor is None
    small = max_pnr_covariance(np.diag([100.0, 0.01]), budget=1.0)
    assert small.floor is not None
    assert np.all(np.isfinite(small.variances)) and small.variances[1] == small.floor
    with pytest.raises(StructureError):
        max_pnr_covariance(np.diag([1.0, -1.0]), budget=1.0)
    with pytest.raises(ParameterError):
        max_pnr_covariance(np.eye(2))


def test_pnr_allocation_normalizes():
    a = pnr_allocation([5.0, 1.0, 1e-4], 1.0)
    assert a.total == pytest.approx(1.0)
    assert np.all(a.theta > 0)


# --- private directions and baselines ------------------------------------


def test_private_directions_zero_noise_limit():
    rng = np.random.default_rng(3)
    x = np.clip(rng.standard_normal((3, 500)) * np.array([[0.6], [0.3], [0.1]]), -1, 1)
    pd = private_directions(x, 0.5, PrivacyParams(1e9, 0.5), RandomSeed(1))
    _, vecs = np.linalg.eigh(x @ x.T / 500)
    assert abs(abs(pd.dirs.w[:, 0] @ vecs[:, -1]) - 1) < 1e-6
    assert pd.remaining.epsilon == pytest.approx(5e8)
    with pytest.raises(ParameterError):
        private_directions(x, 1.0, PrivacyParams(1.0, 0.1), RandomSeed(1))


def test_gaussian_baseline():
    f = np.arange(6.0).reshape(2, 3)
    q0 = QuerySpec(2, 3, 0.0, 10.0)
    p = PrivacyParams(1.0, 1e-5)
    assert np.array_equal(baseline_gaussian(f, q0, p, RandomSeed(0)), f)
    q = QuerySpec(200, 500, 1.0, 10.0)
    z = baseline_gaussian(np.zeros((200, 500)), q, p, RandomSeed(1))
    assert z.std() == pytest.approx(gaussian_scale(1.0, p), rel=0.02)
    assert gaussian_scale(1.0, p) == pytest.approx(math.sqrt(2 * math.log(1.25e5)))


def test_laplace_baseline():
    f = np.ones((2, 2))
    assert np.array_equal(baseline_laplace(f, 0.0, 1.0, RandomSeed(0)), f)
    z = baseline_laplace(np.zeros((300, 400)), 2.0, 0.5, RandomSeed(0))
    assert z.std() == pytest.approx(math.sqrt(2) * 4.0, rel=0.02)
    with pytest.raises(ParameterError):
        baseline_laplace(f, -1.0, 1.0, RandomSeed(0))
    with pytest.raises(ParameterError):
        baseline_laplace(f, 1.0, 0.0, RandomSeed(0))
