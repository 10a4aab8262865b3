import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvgdp.errors import ConfigError, ParameterError, StructureError
from mvgdp.evalharness import (
    Dataset,
    ExperimentConfig,
    Iid,
    MechanismChoice,
    MechanismKind,
    PrivateSvd,
    StandardBasis,
    TrialReport,
    config_from_dict,
    config_to_dict,
    default_config,
    direction_study,
    load_csv,
    metric_delta_rho,
    metric_pnr,
    metric_rmse,
    metric_rss,
    paired_difference,
    query_covariance,
    query_identity,
    ridge_fit,
    run_experiment,
    synthetic_ctg,
    synthetic_liver,
    synthetic_movement,
)


def random_spd(rng, k):
    a = rng.standard_normal((k, k))
    return a @ a.T + 0.1 * np.eye(k)


def random_orthogonal(rng, k):
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return q


@pytest.fixture(scope="module")
def liver():
    return synthetic_liver(0)


@pytest.fixture(scope="module")
def movement():
    return synthetic_movement(0)


# --- datasets and queries ------------------------------------------------


def test_dataset_validation():
    with pytest.raises(ParameterError):
        Dataset(np.zeros((2, 1)), ["a", "b"], (-1, 1))
    with pytest.raises(ParameterError):
        Dataset(np.full((1, 3), 2.0), ["a"], (-1, 1))
    with pytest.raises(ParameterError):
        Dataset(np.zeros((2, 3)), ["a"], (-1, 1))


def test_synthetic_shapes_and_ranges(liver, movement):
    ctg = synthetic_ctg(0)
    assert (liver.m, liver.n) == (6, 345) and liver.feature_names[2] == "sgpt"
    assert (movement.m, movement.n) == (4, 10176)
    assert np.allclose(movement.features.mean(axis=1), 0, atol=1e-9)
    assert (ctg.m, ctg.n) == (21, 2126)
    assert ctg.feature_names[7] == "ASTV" and ctg.feature_names[9] == "ALTV"
    assert np.array_equal(synthetic_liver(0).features, liver.features)
    assert not np.array_equal(synthetic_liver(1).features, liver.features)


def test_load_csv_transposes(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n0.1,0.2\n0.3,0.4\n0.5,0.6\n")
    d = load_csv(path, (0, 1))
    assert d.feature_names == ("a", "b")
    assert np.array_equal(d.features, [[0.1, 0.3, 0.5], [0.2, 0.4, 0.6]])


def test_query_identity(liver):
    sub = liver.subset(np.arange(248))
    out = query_identity(sub)
    assert out.shape == (6, 248)
    assert out is query_identity(sub)


def test_query_covariance():
    d = Dataset(np.eye(2), ["a", "b"], (0, 1))
    assert np.array_equal(query_covariance(d), np.eye(2) / 2)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (3, 50))
    d = Dataset(x, ["a", "b", "c"], (-1, 1))
    brute = sum(np.outer(x[:, j], x[:, j]) for j in range(50)) / 50
    assert np.allclose(query_covariance(d), brute, atol=1e-12)


# --- metrics -------------------------------------------------------------


def test_rmse_examples():
    assert metric_rmse([1, 2], [1, 2]) == 0.0
    assert metric_rmse([0, 0], [1, -1]) == 1.0
    assert metric_rmse([0.5, -0.5], [1, -1]) == 0.5
    with pytest.raises(ParameterError):
        metric_rmse([1], [1, 2])


def test_delta_rho_examples():
    s = np.diag([2.0, 1.0])
    assert metric_delta_rho([1, 0], s) == 0.0
    assert metric_delta_rho([0, 1], s) == 1.0
    assert metric_delta_rho(np.array([1, 1]) / math.sqrt(2), s) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ParameterError):
        metric_delta_rho([1, 1], s)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_delta_rho_properties(k, seed):
    rng = np.random.default_rng(seed)
    s = random_spd(rng, k)
    v = rng.standard_normal(k)
    assert metric_delta_rho(v / np.linalg.norm(v), s) >= 0
    top = np.linalg.eigh(s)[1][:, -1]
    assert metric_delta_rho(top, s) <= 1e-8 * max(1.0, np.abs(s).max())


def test_rss_examples():
    s = np.diag([2.0, 1.0])
    assert metric_rss(s, s) == 0.0
    assert metric_rss(np.diag([1.0, 2.0]), s) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ParameterError):
        metric_rss(np.eye(2), np.eye(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_rss_orthogonal_invariance(k, seed):
    rng = np.random.default_rng(seed)
    a, b = random_spd(rng, k), random_spd(rng, k)
    q = random_orthogonal(rng, k)
    assert metric_rss(b, b) == pytest.approx(0.0, abs=1e-9 * np.abs(b).max() ** 2)
    assert metric_rss(q @ a @ q.T, q @ b @ q.T) == pytest.approx(metric_rss(a, b), rel=1e-7, abs=1e-10)


def test_pnr_examples():
    assert metric_pnr(np.eye(2), np.eye(2)).pnr == pytest.approx(4.0, rel=1e-12)
    assert metric_pnr(np.zeros((2, 2)), np.eye(2)).pnr == pytest.approx(1.0, rel=1e-12)
    r = metric_pnr(np.diag([3.0, 1.0]), np.eye(2))
    assert r.pnr == pytest.approx(8.0, rel=1e-12)
    assert r.half_log == pytest.approx(0.5 * math.log(8.0), rel=1e-12)
    with pytest.raises(StructureError):
        metric_pnr(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(StructureError):
        metric_pnr(np.diag([1.0, -1.0]), np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_pnr_at_least_one(k, seed):
    rng = np.random.default_rng(seed)
    assert metric_pnr(random_spd(rng, k), random_spd(rng, k)).pnr >= 1.0


# --- ridge ---------------------------------------------------------------


def test_ridge_recovers_exact_weights():
    rng = np.random.default_rng(0)
    f = rng.standard_normal((3, 40))
    w = np.array([0.5, -2.0, 1.0])
    assert np.allclose(ridge_fit(f, w @ f, 1e-12), w, atol=1e-6)


def test_ridge_large_lambda_shrinks():
    rng = np.random.default_rng(1)
    f = rng.standard_normal((2, 20))
    assert np.linalg.norm(ridge_fit(f, f[0], 1e12)) < 1e-9


def test_ridge_small_system_oracle():
    f = np.array([[1.0, 2.0, 3.0]])  # one feature, three samples
    y = np.array([1.0, 2.0, 2.0])
    # (14 + 0.5) w = 1 + 4 + 6
    assert ridge_fit(f, y, 0.5)[0] == pytest.approx(11 / 14.5, rel=1e-10)
    with pytest.raises(ParameterError):
        ridge_fit(f, y[:2])


# --- reports -------------------------------------------------------------


def test_trial_report_ci():
    r = TrialReport("x", "rmse", [1.0, 2.0, 3.0, 4.0])
    assert r.mean == 2.5
    assert r.ci_half_width == pytest.approx(1.96 * np.std([1, 2, 3, 4], ddof=1) / 2)
    assert TrialReport("x", "rmse", [3.0]).ci_half_width == 0.0
    d = paired_difference(r, TrialReport("y", "rmse", [0.0, 1.0, 2.0, 3.0]))
    assert d == (1.0, 0.0)


# --- configuration and runner --------------------------------------------


def cfg_for(task, mechs, **kw):
    base = dict(epsilon=1.0, delta="1/n", trials=3, seed=5)
    base.update(kw)
    return ExperimentConfig(task, tuple(mechs), **base)


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg_for("regression", [MechanismChoice("gaussian")])  # missing target
    with pytest.raises(ConfigError):
        cfg_for("covariance", [MechanismChoice("gaussian")], trials=0)
    with pytest.raises(ConfigError):
        cfg_for("covariance", [MechanismChoice("gaussian"), MechanismChoice("gaussian")])
    with pytest.raises(ConfigError):
        StandardBasis((0,), (1.0,))
    with pytest.raises(ConfigError):
        PrivateSvd(0.0)


@pytest.mark.parametrize(
    "task,choice",
    [
        ("covariance", MechanismChoice("mvg-equimodal")),
        ("first-pc", MechanismChoice("mvg-unimodal")),
        ("covariance", MechanismChoice("mvg-unimodal", theorem="psd")),
        ("covariance", MechanismChoice("mvg-unimodal", directions=StandardBasis((40,)))),
        ("covariance", MechanismChoice("gaussian", directions=PrivateSvd())),
    ],
)
def test_mismatch_raises_before_trials(task, choice, monkeypatch):
    import mvgdp.evalharness as eh

    calls = []
    monkeypatch.setattr(eh, "metric_rss", lambda *a: calls.append(1) or 0.0)
    data = synthetic_ctg(0) if task == "covariance" else synthetic_movement(0)
    with pytest.raises(ConfigError):
        run_experiment(cfg_for(task, [MechanismChoice("gaussian", "g"), choice]), data)
    assert calls == []


def test_unknown_regression_target(liver):
    with pytest.raises(ConfigError):
        run_experiment(cfg_for("regression", [MechanismChoice("gaussian")], target="nope"), liver)


def test_huge_epsilon_matches_nonprivate(liver):
    mechs = [MechanismChoice("nonprivate"), MechanismChoice("gaussian")]
    res = run_experiment(cfg_for("regression", mechs, target="drinks", epsilon=1e6, trials=5), liver)
    base, g = res.report("nonprivate"), res.report("gaussian")
    assert abs(g.mean - base.mean) <= max(g.ci_half_width, 1e-6)
    assert base.ci_half_width == 0.0


def test_mvg_approaches_nonprivate_in_zero_noise_limit(liver):
    mechs = [
        MechanismChoice("nonprivate"),
        MechanismChoice("mvg-unimodal", "mvg", directions=StandardBasis((2, 5), (0.75,))),
    ]
    res = run_experiment(cfg_for("regression", mechs, target="drinks", epsilon=1e10, trials=3), liver)
    assert res.report("mvg").mean == pytest.approx(res.report("nonprivate").mean, rel=0.05)


def test_single_trial_ci_zero(movement):
    res = run_experiment(cfg_for("first-pc", [MechanismChoice("gaussian")], trials=1), movement)
    assert res.reports[0].ci_half_width == 0.0


def test_bit_reproducible(liver):
    mechs = [
        MechanismChoice("mvg-unimodal", "pnr", directions=PrivateSvd(0.2)),
        MechanismChoice("mvg-unimodal", "bin", directions=StandardBasis((2, 5), (0.55, 0.95))),
        MechanismChoice("laplace"),
    ]
    cfg = cfg_for("regression", mechs, target="drinks", epsilon=1e8)
    a = run_experiment(cfg, liver)
    b = run_experiment(cfg, liver)
    for ra, rb in zip(a.reports, b.reports):
        assert np.array_equal(ra.values, rb.values)
    assert len(a.report("bin").metadata["tau_sweep"]) == 2


def test_paired_seeds_across_mechanisms(movement):
    # identical mechanisms under different labels see identical noise
    mechs = [MechanismChoice("gaussian", "a"), MechanismChoice("gaussian", "b")]
    res = run_experiment(cfg_for("first-pc", mechs, trials=4), movement)
    assert np.array_equal(res.report("a").values, res.report("b").values)


def test_config_round_trip(liver):
    cfg, _ = default_config("regression", trials=7, seed=3)
    again = config_from_dict(config_to_dict(cfg))
    assert config_to_dict(again) == config_to_dict(cfg)
    named = config_from_dict(
        {"task": "regression", "seed": 1, "target": "drinks",
         "mechanisms": [{"kind": "mvg-unimodal", "directions": {"kind": "basis", "indices": ["sgpt", "drinks"]}}]},
        liver,
    )
    assert named.mechanisms[0].directions.indices == (2, 5)
    with pytest.raises(ConfigError):
        config_from_dict({"task": "regression"})
    with pytest.raises(ConfigError):
        config_from_dict({"task": "bogus", "seed": 1, "mechanisms": [{"kind": "gaussian"}]})


# --- direction study -----------------------------------------------------


def test_direction_study_grid_and_identical_choices(movement):
    cfg = cfg_for("first-pc", [MechanismChoice("mvg-equimodal", theorem="psd")], trials=8)
    same = StandardBasis((0, 3), (0.8,))
    cells = direction_study(cfg, movement, {"a": same, "b": same, "c": Iid()}, [1.0, 1e3])
    assert len(cells) == 3 * 2
    a = [c.report for c in cells if c.label == "a"]
    b = [c.report for c in cells if c.label == "b"]
    for ra, rb in zip(a, b):
        d = paired_difference(ra, rb)
        assert abs(d.mean) <= d.ci_half_width


def test_direction_study_informative_beats_anti_informative(movement):
    # ANC0 and ANC3 carry the top component of the synthetic movement data
    cfg = cfg_for("first-pc", [MechanismChoice("mvg-equimodal", theorem="psd")], trials=100)
    cells = direction_study(
        cfg, movement,
        {"informative": StandardBasis((0, 3), (0.95,)), "anti": StandardBasis((1, 2), (0.95,))},
        [1e4],
    )
    good, bad = cells[0].report, cells[1].report
    d = paired_difference(good, bad)
    assert d.mean < 0 and abs(d.mean) > d.ci_half_width


def test_direction_study_needs_two_choices(movement):
    cfg = cfg_for("first-pc", [MechanismChoice("mvg-equimodal")], trials=2)
    with pytest.raises(ConfigError):
        direction_study(cfg, movement, {"a": Iid()}, [1.0])
    with pytest.raises(ConfigError):
        direction_study(cfg_for("first-pc", [MechanismChoice("gaussian")]), movement, {"a": Iid(), "b": Iid()}, [1.0])


@pytest.mark.slow
def test_exp3_monotone_privacy_utility_for_gaussian_baseline():
    data = synthetic_ctg(0)
    means = []
    for eps in (0.1, 1.0, 10.0):
        cfg = cfg_for("covariance", [MechanismChoice("gaussian")], epsilon=eps, trials=100)
        means.append(run_experiment(cfg, data).reports[0].mean)
    assert means[0] > means[1] > means[2]


@pytest.mark.slow
def test_exp3_monotone_privacy_utility_for_mvg():
    """Checked against the MVG design of the covariance experiment; see the README note."""
    data = synthetic_ctg(0)
    choice = MechanismChoice(MechanismKind.MVG_UNIMODAL, "mvg", directions=StandardBasis((0, 7, 9), (0.95,)))
    means = []
    for eps in (0.1, 1.0, 10.0):
        cfg = cfg_for("covariance", [choice], epsilon=eps, trials=100)
        means.append(run_experiment(cfg, data).reports[0].mean)
    assert means[0] > means[1] > means[2]
