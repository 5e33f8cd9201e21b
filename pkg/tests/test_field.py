import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loctail.field import (FieldSpec, Limits, NonIntegrableError, ScalingMatrix, ScalingVector,
                           SLNDSpec, SpecificationError, alpha_norm, lambda_exponent, matrix_power,
                           schur_scale, variance_sandwich)
from loctail.models import AnisotropicFBM, ExplicitKernel, IndependentComponents, MultiFBM
from loctail.presets import preset

# tiny magnitudes underflow under |t|^{1/alpha}; keep them out of the zero test
coords = st.one_of(st.just(0.0), st.floats(1e-3, 10), st.floats(-10, -1e-3))
alphas = st.floats(0.2, 5.0)
omegas = st.floats(1e-3, 1e3)


def test_alpha_norm_examples():
    assert alpha_norm([0.25, 0.04], [1, 2]) == pytest.approx(0.45, rel=1e-14)
    assert alpha_norm([0.0, 0.0, 0.0], [1, 2, 3]) == 0.0
    assert alpha_norm([1, 1], [1, 1]) == 2.0


def test_alpha_norm_dimension_mismatch():
    with pytest.raises(SpecificationError):
        alpha_norm([1.0, 2.0], [1.0])


@given(st.lists(st.tuples(coords, alphas), min_size=1, max_size=4))
def test_alpha_norm_sign_symmetric_and_zero_only_at_origin(data):
    t = np.array([c for c, _ in data])
    a = np.array([x for _, x in data])
    flips = np.where(np.arange(t.size) % 2 == 0, -1.0, 1.0)
    assert alpha_norm(t, a) == pytest.approx(alpha_norm(t * flips, a), rel=1e-15)
    assert (alpha_norm(t, a) == 0) == bool(np.all(t == 0))


def test_schur_scale_examples():
    np.testing.assert_allclose(schur_scale([0.5, 0.5], 4, [1, 0.5]), [2.0, 1.0])
    np.testing.assert_array_equal(schur_scale([0.3, 0.7], 1.0, [2, 3]), [0.3, 0.7])
    # both sides of the homogeneity identity evaluated separately
    lhs = alpha_norm(schur_scale([0.5, 0.5], 4, [1, 0.5]), [1, 0.5])
    assert lhs == pytest.approx(3.0, rel=1e-14)
    assert 4 * alpha_norm([0.5, 0.5], [1, 0.5]) == pytest.approx(3.0, rel=1e-14)


def test_schur_scale_rejects_nonpositive_omega():
    with pytest.raises(SpecificationError):
        schur_scale([1.0], 0.0, [1.0])


@given(st.lists(st.tuples(coords, alphas), min_size=1, max_size=4), omegas)
def test_homogeneity(data, omega):
    t = np.array([c for c, _ in data])
    a = np.array([x for _, x in data])
    base = alpha_norm(t, a)
    assert alpha_norm(schur_scale(t, omega, a), a) == pytest.approx(omega * base, rel=1e-12, abs=1e-300)


def test_triangle_inequality_random_triples(rng):
    for _ in range(10 ** 4 // 100):
        a = rng.uniform(1.0, 4.0, size=3)
        x, y, z = rng.uniform(-2, 2, size=(3, 100, 3))
        lhs = alpha_norm(x - z, a)
        rhs = alpha_norm(x - y, a) + alpha_norm(y - z, a)
        assert np.all(lhs <= rhs * (1 + 1e-12))


def test_matrix_power_examples():
    np.testing.assert_allclose(matrix_power(1.0, [[0.3, 0.2], [-0.1, 0.4]]), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(matrix_power(4.0, [[0.5, 0], [0, 0.25]]),
                               [[2.0, 0.0], [0.0, math.sqrt(2)]], rtol=1e-14)
    np.testing.assert_allclose(matrix_power(3.0, np.diag([0.2, 0.7, 1.1])),
                               np.diag([3 ** 0.2, 3 ** 0.7, 3 ** 1.1]), rtol=1e-13)


def _nonsymmetric(rng, d):
    H = rng.normal(size=(d, d)) * 0.5
    return H + np.eye(d) * (abs(np.trace(H)) + 0.1)


def test_matrix_power_determinant_identity(rng):
    for _ in range(200):
        d = int(rng.integers(1, 5))
        H = _nonsymmetric(rng, d)
        omega = float(np.exp(rng.uniform(-3, 3)))
        W = matrix_power(omega, H)
        assert np.linalg.det(W) == pytest.approx(omega ** np.trace(H), rel=1e-10)


def test_matrix_power_group_law(rng):
    for _ in range(200):
        d = int(rng.integers(1, 5))
        H = _nonsymmetric(rng, d) if rng.random() < 0.5 else np.diag(rng.uniform(0.1, 1, d))
        w1, w2 = np.exp(rng.uniform(-2, 2, size=2))
        lhs = matrix_power(w1 * w2, H)
        rhs = matrix_power(w1, H) @ matrix_power(w2, H)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(lhs))


def test_matrix_power_series_matches_scipy(rng):
    from scipy.linalg import expm
    for _ in range(50):
        H = _nonsymmetric(rng, 3)
        omega = float(np.exp(rng.uniform(-4, 4)))
        np.testing.assert_allclose(matrix_power(omega, H), expm(math.log(omega) * H), rtol=1e-10)


def test_lambda_examples():
    fbm_plane = FieldSpec.from_model(IndependentComponents((MultiFBM(0.5), MultiFBM(0.5))), N=1)
    assert lambda_exponent(fbm_plane) == pytest.approx(1.0)
    assert lambda_exponent(preset("exceptional")) == pytest.approx(0.25)
    assert lambda_exponent(FieldSpec.from_model(MultiFBM(1.0), N=1)) == 1.0


def test_scaling_vector_invariants():
    with pytest.raises(SpecificationError):
        ScalingVector((1.0, 0.0))
    with pytest.raises(SpecificationError):
        ScalingVector((1e-4,))
    assert ScalingVector((1.0, 0.5)).mutually_rational
    assert ScalingVector((1.0, 1.5, 0.25)).mutually_rational
    assert not ScalingVector((1.0, math.sqrt(2))).mutually_rational
    assert ScalingVector((0.5, 1.0)).normalized().alpha == (1.0, 2.0)


def test_scaling_matrix_trace_positive():
    with pytest.raises(SpecificationError):
        ScalingMatrix([[0.5, 0], [0, -0.5]])
    assert ScalingMatrix([[0.5]]).trace == 0.5


def test_fieldspec_validates_model_dimensions():
    with pytest.raises(SpecificationError):
        FieldSpec(N=3, d=1, alpha=(1, 1, 1), H=[[0.5]], model=AnisotropicFBM((1, 1), (1, 1), 0.5))
    with pytest.raises(SpecificationError):
        FieldSpec(N=1, d=2, alpha=(1,), H=np.eye(2) * 0.5, model=MultiFBM(0.5))


def test_fieldspec_rejects_wrong_scaling():
    with pytest.raises(SpecificationError):
        FieldSpec(N=1, d=1, alpha=(1.0,), H=[[0.3]], model=MultiFBM(0.5))
    # common rescaling of (alpha, H) describes the same invariance
    spec = FieldSpec(N=1, d=1, alpha=(2.0,), H=[[1.0]], model=MultiFBM(0.5))
    assert spec.lam == pytest.approx(0.5)


def test_fieldspec_caps():
    with pytest.raises(SpecificationError):
        FieldSpec.from_model(MultiFBM(0.5), N=5)
    spec = FieldSpec.from_model(MultiFBM(0.5), N=5, limits=Limits(max_N=6))
    assert spec.N == 5


def test_explicit_kernel_skips_validation_with_warning():
    k = ExplicitKernel(lambda s, t: [[min(s[0], t[0])]], n_params=1)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        spec = FieldSpec(N=1, d=1, alpha=(1.0,), H=[[0.5]], model=k)
    assert any("validation skipped" in str(w.message) for w in caught)
    assert spec.lam == 0.5


def test_integrability_and_message():
    spec = FieldSpec.from_model(MultiFBM(1.0), N=1)
    assert not spec.integrable()
    with pytest.raises(NonIntegrableError, match=r"sum\(alpha\) > beta \* tr\(H\)"):
        spec.require_integrable()
    assert preset("bm").integrable(1.9) and not preset("bm").integrable(2.0)


@pytest.mark.parametrize("name", ["bm", "fbm:0.3", "fbm2d:0.4", "aniso:0.5:1,2", "exceptional"])
def test_json_round_trip(name):
    spec = preset(name)
    doc = json.loads(json.dumps(spec.to_json()))
    back = FieldSpec.from_json(doc)
    assert back == spec
    assert back.fingerprint() == spec.fingerprint()


def test_from_json_rejects_bad_schema():
    doc = preset("bm").to_json()
    doc["schema"] = "other/9"
    with pytest.raises(SpecificationError):
        FieldSpec.from_json(doc)
    with pytest.raises(SpecificationError):
        FieldSpec.from_json({"N": 1})


def test_slnd_spec_for_field():
    s = SLNDSpec.for_field(preset("aniso:0.5:1,2"))
    assert s.H_slnd == 0.5
    assert s.xi == (2.0, 1.0)
    np.testing.assert_allclose(s.alpha.array, [1.0, 0.5])
    with pytest.raises(SpecificationError):
        SLNDSpec((1.0, -1.0), 0.5)


@pytest.mark.parametrize("name", ["bm", "fbm:0.3", "fbm2d:0.7", "aniso:0.5:1,2", "exceptional"])
def test_variance_sandwich_constants_exist(name):
    c1, c2 = variance_sandwich(preset(name), n_probe=400, seed=3)
    assert 0 < c1 <= c2 < math.inf
    # log-spaced probes over 4 decades: the ratio must not degenerate
    assert c2 / c1 < 1e3
