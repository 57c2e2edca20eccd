import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccreg.datamodel import DgpConfig, generate_dataset
from ccreg.diagnostics import projector_suite
from ccreg.estimators import (
    EstimatorKind,
    EstimatorSpec,
    NAMED_WEIGHTS,
    SingularWeight,
    WeightSpec,
    build_first_stage,
    cca_consistency_check,
    ccr_fit,
    first_stage_from_svds,
    fit,
    naive_2sls,
    oracle_2sls,
    resolve_weights,
)
from ccreg.speclin import TruncatedSvd, min_norm_solve, thin_svd, truncate

from conftest import random_low_rank, random_orthonormal


def _tsvd(s, n=6, d=5, seed=0):
    rng = np.random.default_rng(seed)
    r = len(s)
    return TruncatedSvd(random_orthonormal(rng, n, r), np.asarray(s, float), random_orthonormal(rng, d, r), r)


def test_pca_weights():
    cov, inst = _tsvd([0.35, 0.19]), _tsvd([1.0, 0.5, 0.2], seed=1)
    a_l, a_r = resolve_weights(EstimatorSpec("pca", 2, 3), cov, inst)
    np.testing.assert_array_equal(a_r, [0.35, 0.19])
    np.testing.assert_array_equal(a_l, [1.0, 1.0, 1.0])


def test_whiten_weights():
    cov, inst = _tsvd([0.35, 0.19]), _tsvd([1.0, 0.5, 0.2], seed=1)
    a_l, a_r = resolve_weights(EstimatorSpec("whiten", 2, 3), cov, inst)
    np.testing.assert_array_equal(a_l, 1.0)
    np.testing.assert_array_equal(a_r, 1.0)


def test_cca_weights():
    cov, inst = _tsvd([0.35, 0.19]), _tsvd([2.0, 0.5], seed=1)
    a_l, a_r = resolve_weights(EstimatorSpec("cca", 2, 2), cov, inst)
    np.testing.assert_array_equal(a_l, [0.5, 2.0])
    np.testing.assert_array_equal(a_r, [1.0, 1.0])


def test_cca_weight_singular():
    cov, inst = _tsvd([0.35, 0.19]), _tsvd([2.0, 1e-14], seed=1)
    with pytest.raises(SingularWeight):
        resolve_weights(EstimatorSpec("cca", 2, 2), cov, inst)


def test_custom_weights_must_be_positive():
    with pytest.raises(ValueError):
        WeightSpec("custom", "identity", left_values=(1.0, -1.0))
    ws = WeightSpec("custom", "custom", left_values=(1.0, 2.0, 3.0), right_values=(4.0, 5.0))
    cov, inst = _tsvd([0.35, 0.19]), _tsvd([1.0, 0.5, 0.2], seed=1)
    a_l, a_r = resolve_weights(EstimatorSpec("custom", 2, 3, weights=ws), cov, inst)
    np.testing.assert_array_equal(a_l, [1, 2, 3])
    np.testing.assert_array_equal(a_r, [4, 5])


def test_k_above_ell_is_flagged():
    with pytest.warns(UserWarning):
        EstimatorSpec("pca", k=5, ell=3)


def test_self_overlap_is_identity(rng):
    z = random_low_rank(rng, 50, 12, 4) + 0.01 * rng.standard_normal((50, 12))
    fs = build_first_stage(z, z, EstimatorSpec("whiten", 4, 4))
    np.testing.assert_allclose(np.linalg.svd(fs.overlap, compute_uv=False), 1.0, atol=1e-8)


def test_orthogonal_designs_have_zero_overlap(rng):
    z_x = np.zeros((40, 6))
    z_w = np.zeros((40, 7))
    z_x[:20] = rng.standard_normal((20, 6))
    z_w[20:] = rng.standard_normal((20, 7))
    fs = build_first_stage(z_x, z_w, EstimatorSpec("whiten", 3, 4))
    assert np.linalg.norm(fs.overlap, 2) <= 1e-8


def test_overlap_matches_independent_product(rng):
    z_x = random_low_rank(rng, 100, 20, 3)
    z_w = random_low_rank(rng, 100, 30, 4)
    fs = build_first_stage(z_x, z_w, EstimatorSpec("pca", 3, 4))
    ut, u = fs.inst.u, fs.cov.u
    manual = np.array([[sum(ut[t, i] * u[t, j] for t in range(100)) for j in range(3)] for i in range(4)])
    assert np.max(np.abs(fs.overlap - manual)) <= 1e-12
    assert fs.delta.shape == (4, 3) and fs.r <= 3
    assert np.all(np.linalg.svd(fs.overlap, compute_uv=False) <= 1 + 1e-8)


def test_rank_shortfall_is_flagged(rng):
    z_x = random_low_rank(rng, 30, 10, 2)
    z_w = random_low_rank(rng, 30, 10, 5)
    fs = build_first_stage(z_x, z_w, EstimatorSpec("pca", 4, 5))
    assert fs.cov.rank == 2
    assert any(f.startswith("rank_shortfall_cov") for f in fs.flags)


def test_clean_self_instrumenting_recovery(rng):
    # unit spectrum: whitening loses nothing
    x = random_orthonormal(rng, 80, 3) @ random_orthonormal(rng, 12, 3).T
    beta0 = rng.standard_normal(12)
    fs = build_first_stage(x, x, EstimatorSpec("whiten", 3, 3))
    beta_hat = ccr_fit(x @ beta0, fs)
    v = thin_svd(x).v
    assert np.linalg.norm(beta_hat - v @ (v.T @ beta0)) <= 1e-8


def test_whiten_rescales_by_covariate_spectrum(rng):
    # general spectrum: the whitened design returns V S V^T beta
    x = random_low_rank(rng, 80, 12, 3)
    beta0 = rng.standard_normal(12)
    fs = build_first_stage(x, x, EstimatorSpec("whiten", 3, 3))
    svd = thin_svd(x)
    expected = svd.v @ (svd.s * (svd.v.T @ beta0))
    assert np.linalg.norm(ccr_fit(x @ beta0, fs) - expected) <= 1e-8


def test_zero_delta_returns_zero(rng):
    z_x = np.zeros((40, 6))
    z_w = np.zeros((40, 7))
    z_x[:20] = rng.standard_normal((20, 6))
    z_w[20:] = rng.standard_normal((20, 7))
    spec = EstimatorSpec("whiten", 3, 4)
    cov, inst = truncate(thin_svd(z_x), 3), truncate(thin_svd(z_w), 4)
    fs = first_stage_from_svds(cov, inst, spec.weight_spec())
    # the overlap is roundoff-sized; force it to exactly zero
    fs = first_stage_from_svds(cov, TruncatedSvd(inst.u * 0 + _orth_complement(cov.u, 4), inst.s, inst.v, 4),
                               spec.weight_spec())
    assert fs.r == 0
    with pytest.warns(UserWarning):
        np.testing.assert_array_equal(ccr_fit(rng.standard_normal(40), fs), 0.0)


def _orth_complement(u, m):
    n = u.shape[0]
    basis = np.eye(n)[:, -m:]
    return basis if np.all(u[-m:] == 0) else np.linalg.qr(basis - u @ (u.T @ basis))[0]


@pytest.mark.parametrize("kind", ["pca", "whiten", "cca"])
def test_factored_fit_matches_dense_pseudoinverse(rng, kind):
    z_x = random_low_rank(rng, 60, 10, 3) + 0.1 * rng.standard_normal((60, 10))
    z_w = random_low_rank(rng, 60, 12, 4) + 0.1 * rng.standard_normal((60, 12))
    y = rng.standard_normal(60)
    fs = build_first_stage(z_x, z_w, EstimatorSpec(kind, 2, 3))
    dense = min_norm_solve(fs.design(), y)
    assert np.max(np.abs(ccr_fit(y, fs) - dense)) <= 1e-9


def test_oracle_exact_identification(default_dataset):
    t = default_dataset.truth
    y = t.x @ t.beta
    assert np.linalg.norm(oracle_2sls(y, t.x, t.w) - t.beta) <= 1e-8


def test_oracle_full_relevance(rng):
    x = random_low_rank(rng, 50, 8, 3)
    w = np.hstack([x, rng.standard_normal((50, 4))])
    y = x @ rng.standard_normal(8)
    np.testing.assert_allclose(oracle_2sls(y, x, w), np.linalg.pinv(x) @ y, atol=1e-8)


def test_oracle_is_family_member(rng):
    x = random_low_rank(rng, 50, 8, 3)
    w = random_low_rank(rng, 50, 9, 4)
    y = rng.standard_normal(50)
    fs = build_first_stage(x, w, EstimatorSpec("pca", 3, 4))
    assert np.max(np.abs(ccr_fit(y, fs) - oracle_2sls(y, x, w))) <= 1e-8


def test_naive_matches_oracle_on_clean_data(default_dataset):
    t = default_dataset.truth
    y = t.x @ t.beta
    np.testing.assert_allclose(naive_2sls(y, t.x, t.w), oracle_2sls(y, t.x, t.w), atol=1e-8)


def test_naive_self_instrumenting(rng):
    z = rng.standard_normal((40, 6))
    y = rng.standard_normal(40)
    np.testing.assert_allclose(naive_2sls(y, z, z), np.linalg.pinv(z) @ y, atol=1e-10)


def test_naive_matches_dense_oracle(rng):
    z_x, z_w = rng.standard_normal((80, 20)), rng.standard_normal((80, 25))
    y = rng.standard_normal(80)
    proj = z_w @ np.linalg.pinv(z_w)
    dense = np.linalg.pinv(proj @ z_x, rcond=1e-12) @ y
    assert np.max(np.abs(naive_2sls(y, z_x, z_w) - dense)) <= 1e-9


def test_naive_fit_decomposes_through_full_rank_first_stage(default_dataset):
    ds = default_dataset
    res = fit(EstimatorSpec("naive"), ds.y, ds.z_x, ds.z_w)
    np.testing.assert_allclose(ccr_fit(ds.y, res.first_stage), res.beta, atol=1e-9 * np.linalg.norm(res.beta))


def test_cca_consistency(rng):
    z_x = random_low_rank(rng, 50, 8, 3) + 0.1 * rng.standard_normal((50, 8))
    z_w = random_low_rank(rng, 50, 10, 4) + 0.1 * rng.standard_normal((50, 10))
    fs = build_first_stage(z_x, z_w, EstimatorSpec("cca", 3, 4))
    dev, mismatch = cca_consistency_check(fs)
    assert dev <= 1e-9
    assert not mismatch


def test_cca_consistency_flags_truncation_mismatch(rng):
    # instruments span 2 directions, covariates 3: rank(overlap) = 2 < k
    z_x = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 8))
    z_w = random_low_rank(rng, 30, 6, 2)
    with pytest.warns(UserWarning, match="k=3 > ell=2"):
        spec = EstimatorSpec("cca", 3, 2)
    fs = build_first_stage(z_x, z_w, spec)
    dev, mismatch = cca_consistency_check(fs)
    assert mismatch
    assert np.isfinite(dev)


def test_family_members_share_the_ccr_path(default_dataset):
    ds = default_dataset
    for kind in ("pca", "whiten", "cca"):
        spec = EstimatorSpec(kind)
        res = fit(spec, ds.y, ds.z_x, ds.z_w)
        custom = EstimatorSpec("custom", weights=WeightSpec(
            "custom", "custom", left_values=tuple(res.first_stage.a_left),
            right_values=tuple(res.first_stage.a_right)))
        other = fit(custom, ds.y, ds.z_x, ds.z_w).beta
        assert np.max(np.abs(other - res.beta)) <= 1e-10 * max(1.0, np.max(np.abs(res.beta)))


@pytest.mark.parametrize("kind", ["naive", "pca", "whiten", "cca"])
def test_estimate_confined_to_row_space(default_dataset, kind):
    ds = default_dataset
    res = fit(EstimatorSpec(kind), ds.y, ds.z_x, ds.z_w)
    suite = projector_suite(res.first_stage)
    scale = max(1.0, np.linalg.norm(res.beta))
    assert np.linalg.norm(suite.null @ res.beta) <= 1e-9 * scale
    assert np.linalg.norm(suite.perp @ res.beta) <= 1e-9 * scale


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["pca", "whiten"]))
def test_left_rotation_invariance(seed, kind):
    rng = np.random.default_rng(seed)
    z_x = random_low_rank(rng, 40, 9, 3) + 0.1 * rng.standard_normal((40, 9))
    z_w = random_low_rank(rng, 40, 11, 4) + 0.1 * rng.standard_normal((40, 11))
    y = rng.standard_normal(40)
    ws = NAMED_WEIGHTS[EstimatorKind(kind)]
    cov, inst = truncate(thin_svd(z_x), 3), truncate(thin_svd(z_w), 4)
    base = ccr_fit(y, first_stage_from_svds(cov, inst, ws))
    rot = random_orthonormal(rng, 4, 4)
    rotated = TruncatedSvd(inst.u @ rot, inst.s, inst.v, 4)
    fs_rot = first_stage_from_svds(cov, rotated, ws)
    np.testing.assert_allclose(fs_rot.overlap, rot.T @ (inst.u.T @ cov.u), atol=1e-12)
    assert np.max(np.abs(ccr_fit(y, fs_rot) - base)) <= 1e-9 * max(1.0, np.max(np.abs(base)))


def _noiseless_aligned():
    cfg = DgpConfig(n=300, k=8, ell=8, delta=1.0, c1=0.0, sigma_eps=0.0)
    return generate_dataset(cfg, 0)


@pytest.mark.parametrize("kind", ["pca", "oracle"])
def test_exact_recovery_noiseless_aligned(kind):
    ds = _noiseless_aligned()
    t = ds.truth
    res = fit(EstimatorSpec(kind, 8, 8), ds.y, ds.z_x, ds.z_w, t.x, t.w)
    v = thin_svd(t.x).v
    assert np.linalg.norm(res.beta - v @ (v.T @ t.beta)) <= 1e-8


@pytest.mark.parametrize("kind", ["whiten", "cca"])
def test_noiseless_aligned_closed_form(kind):
    # Whiten returns V S V^T beta; CCA returns V M^T S_w M S V^T beta
    ds = _noiseless_aligned()
    t = ds.truth
    res = fit(EstimatorSpec(kind, 8, 8), ds.y, ds.z_x, ds.z_w)
    fs = res.first_stage
    m = fs.overlap
    core = np.diag(fs.cov.s)
    if kind == "cca":
        core = m.T @ np.diag(fs.inst.s) @ m @ core
    expected = fs.cov.v @ core @ (fs.cov.v.T @ t.beta)
    assert np.linalg.norm(res.beta - expected) <= 1e-8
    v = thin_svd(t.x).v
    assert np.linalg.norm(res.beta - v @ (v.T @ t.beta)) > 1e-3


def test_oracle_requires_truth(default_dataset):
    ds = default_dataset
    with pytest.raises(ValueError):
        fit(EstimatorSpec("oracle"), ds.y, ds.z_x, ds.z_w)


def test_shared_factorization_cache_is_transparent(default_dataset):
    ds = default_dataset
    t = ds.truth
    cache = {}
    for kind in ("naive", "pca", "whiten", "cca", "oracle"):
        spec = EstimatorSpec(kind)
        cached = fit(spec, ds.y, ds.z_x, ds.z_w, t.x, t.w, cache=cache).beta
        fresh = fit(spec, ds.y, ds.z_x, ds.z_w, t.x, t.w).beta
        np.testing.assert_array_equal(cached, fresh)
    assert {name for name, _ in cache} == {"z_x", "z_w", "x", "w"}
