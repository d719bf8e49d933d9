import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reno.frames import AmbientSpace, DimensionError, PeriodicFunction
from reno.models import (
    CnnModel,
    ConvLayer,
    DeepOnetModel,
    FnoLayer,
    FnoModel,
    MlpParams,
    NonUniformSensorWarning,
    SnoModel,
    activation_spectrum,
    conv_apply,
    deeponet_apply,
    fno_apply,
    resolution_map,
    sno_apply,
    square_operator,
)
from reno.operators import DiscreteMap, discrete_aliasing_map
from reno.spaces import (
    BandlimitedSpace,
    SampleGrid,
    SampleVector,
    SubNyquistError,
    dirichlet_basis,
    pack_isometric,
    packed_analysis_matrix,
    real_fourier_basis,
    sample,
    samples_to_coeffs,
)


def cos_mode(amb, k):
    return PeriodicFunction.from_modes(amb, {k: 0.5, -k: 0.5})


def hermitian(rng, K):
    half = rng.standard_normal(K + 1) + 1j * rng.standard_normal(K + 1)
    half[0] = half[0].real
    return np.concatenate([np.conj(half[:0:-1]), half])


# -- convolution ---------------------------------------------------------------------

def test_conv_identity_and_shift():
    s = SampleVector(SampleGrid(4), np.array([1.0, 2.0, 3.0, 4.0]))
    assert np.allclose(conv_apply(ConvLayer(np.array([0.0, 1.0, 0.0])), s).values, s.values)
    # k[-1] = 1 picks out[m] = s[m + 1]
    assert np.allclose(conv_apply(ConvLayer(np.array([1.0, 0.0, 0.0])), s).values, [2, 3, 4, 1])


def test_conv_against_direct_sum():
    rng = np.random.default_rng(0)
    taps = rng.standard_normal(5)
    x = rng.standard_normal(9)
    out = conv_apply(ConvLayer(taps), SampleVector(SampleGrid(9), x)).values
    direct = [sum(x[(m - i) % 9] * taps[i + 2] for i in range(-2, 3)) for m in range(9)]
    assert np.allclose(out, direct)


def test_conv_errors():
    with pytest.raises(ValueError):
        ConvLayer(np.ones(4))
    with pytest.raises(DimensionError):
        conv_apply(ConvLayer(np.ones(5)), SampleVector(SampleGrid(3), np.zeros(3)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.integers(-20, 20), M=st.integers(5, 40))
def test_conv_is_shift_equivariant(seed, shift, M):
    rng = np.random.default_rng(seed)
    layer = ConvLayer(rng.standard_normal(5), "relu")
    x = rng.standard_normal(M)
    a = conv_apply(layer, SampleVector(SampleGrid(M), np.roll(x, shift))).values
    b = np.roll(conv_apply(layer, SampleVector(SampleGrid(M), x)).values, shift)
    assert np.allclose(a, b, atol=1e-12)


def test_cnn_disagrees_across_resolutions():
    K = 5
    cnn = CnnModel((ConvLayer(np.array([0.3, 0.5, -0.2])),))
    M1, M2 = 2 * K + 1, 2 * (2 * K + 1) - 1
    f = BandlimitedSpace.of(K).random_function(np.random.default_rng(1))
    u, u_alt = resolution_map(cnn, M1), resolution_map(cnn, M2)
    psi = dirichlet_basis(BandlimitedSpace.of(K, (M2 - 1) // 2))
    psi_alt = dirichlet_basis(BandlimitedSpace.of((M2 - 1) // 2))
    c = psi.pinv @ f.embed(psi.space).coeffs
    rep = discrete_aliasing_map(u, u_alt, psi, psi, psi_alt, psi_alt, [c])
    assert rep.norm_estimate > 1e-2



@pytest.mark.parametrize("boundary", ["circular", "zero-padded"])
def test_cnn_disagreement_does_not_depend_on_boundary_rule(boundary):
    K = 5
    taps = np.array([0.3, 0.5, -0.2])
    M1, M2 = 2 * K + 1, 4 * K + 3

    def at(M):
        if boundary == "circular":
            return resolution_map(CnnModel((ConvLayer(taps),)), M)
        return DiscreteMap(M, M, lambda c: np.convolve(np.real(c), taps, mode="same") + 0j)

    psi = dirichlet_basis(BandlimitedSpace.of(K, (M2 - 1) // 2))
    psi_alt = dirichlet_basis(BandlimitedSpace.of((M2 - 1) // 2))
    rng = np.random.default_rng(4)
    tests = [psi.pinv @ BandlimitedSpace.of(K, (M2 - 1) // 2).random_function(rng).coeffs for _ in range(5)]
    rep = discrete_aliasing_map(at(M1), at(M2), psi, psi, psi_alt, psi_alt, tests)
    assert rep.norm_estimate > 1e-2

# -- FNO -----------------------------------------------------------------------------

def test_fno_identity_across_resolutions():
    K = 4
    layer = FnoLayer(K, K, np.ones(2 * K + 1))
    f = BandlimitedSpace.of(K).random_function(np.random.default_rng(2))
    for M_in, M_out in ((9, 9), (9, 21), (17, 9), (31, 13)):
        out = fno_apply(layer, sample(f, SampleGrid(M_in)), M_out)
        assert np.allclose(out.values, sample(f, SampleGrid(M_out)).values, atol=1e-12)


def test_fno_constant_bias():
    K = 3
    layer = FnoLayer(K, K, np.zeros(7), bias=PeriodicFunction.from_modes(AmbientSpace(K), {0: 1}))
    s = SampleVector(SampleGrid(11), np.random.default_rng(0).standard_normal(11))
    assert np.allclose(fno_apply(layer, s).values, 1.0)


def test_fno_validation():
    with pytest.raises(ValueError):
        FnoLayer(2, 3, np.ones(7))
    with pytest.raises(ValueError):
        FnoLayer(2, 2, np.array([1, 2, 3, 4, 5j]))
    layer = FnoLayer(4, 4, np.ones(9))
    with pytest.raises(SubNyquistError):
        fno_apply(layer, SampleVector(SampleGrid(7), np.zeros(7)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_fno_without_activation_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    K, K_out, M = 5, 3, 13
    layer = FnoLayer(K, K_out, hermitian(rng, K_out))
    s, t = rng.standard_normal(M), rng.standard_normal(M)
    run = lambda v: fno_apply(layer, SampleVector(SampleGrid(M), v)).values
    assert np.allclose(run(a * s + b * t), a * run(s) + b * run(t), atol=1e-10)


def test_fno_relu_coarse_grid_disagrees_with_fine_reference():
    amb = AmbientSpace(1)
    layer = FnoLayer(1, 1, np.ones(3), activation="relu")
    f = cos_mode(amb, 1)
    coarse = samples_to_coeffs(fno_apply(layer, sample(f, SampleGrid(3))), 1)
    fine = samples_to_coeffs(fno_apply(layer, sample(f, SampleGrid(401)), 401), 1)
    # fine grid recovers relu(cos) low modes 1/pi, 1/4; three nodes see (0, 1, 0) instead
    assert fine.coeffs[1].real == pytest.approx(1 / np.pi, abs=1e-4)
    assert coarse.coeffs[1].real == pytest.approx(1 / 3, abs=1e-12)
    assert (coarse - fine).norm() > 1e-2


def test_fno_model_matches_layer_application():
    rng = np.random.default_rng(3)
    K = 6
    model = FnoModel((FnoLayer(K, K, hermitian(rng, K), 0.4, hermitian(rng, K), "relu"),
                      FnoLayer(K, 4, hermitian(rng, 4), -0.2, None, None)))
    s = SampleVector(SampleGrid(13), rng.standard_normal(13))
    step = fno_apply(model.layers[1], fno_apply(model.layers[0], s))
    assert np.allclose(model.apply_samples(s.values), step.values)


# -- SNO -----------------------------------------------------------------------------

def test_sno_identity_and_zero():
    K = 4
    f = BandlimitedSpace.of(K).random_function(np.random.default_rng(4))
    ident = SnoModel(K, K, MlpParams.identity(2 * K + 1, depth=2))
    assert np.allclose(sno_apply(ident, f).coeffs, f.coeffs, atol=1e-13)
    mlp = MlpParams.init([9, 16, 9], np.random.default_rng(0))
    zero = SnoModel(K, K, MlpParams(mlp.weights[:1] + (np.zeros((9, 16)),), (np.zeros(16), np.zeros(9))))
    assert sno_apply(zero, f).norm() == 0


def test_sno_rejects_wide_input():
    model = SnoModel(2, 2, MlpParams.identity(5))
    with pytest.raises(DimensionError):
        sno_apply(model, PeriodicFunction.from_modes(AmbientSpace(4), {3: 1}))


def test_sno_is_resolution_invariant():
    K = 30
    rng = np.random.default_rng(5)
    model = SnoModel(K, K, MlpParams.init([61, 64, 61], rng, "gelu"))
    f = BandlimitedSpace.of(K).random_function(rng)
    outs = [samples_to_coeffs(sample(f, SampleGrid(M)), K) for M in (61, 121)]
    a, b = (sno_apply(model, g) for g in outs)
    assert np.max(np.abs(a.coeffs - b.coeffs)) <= 1e-10
    # the sample-level wrapper agrees with the coefficient path
    direct = model.apply_samples(sample(f, SampleGrid(121)).values)
    assert np.allclose(direct, sample(a, SampleGrid(121)).values, atol=1e-10)


def test_mlp_sign_convention():
    W = np.array([[2.0, 0.0], [0.0, 3.0]])
    b = np.array([1.0, -1.0])
    mlp = MlpParams((W,), (b,), "relu")
    assert np.allclose(mlp(np.array([1.0, 1.0])), [1.0, 4.0])


# -- DeepONet ------------------------------------------------------------------------

def linear_deeponet(N):
    space = BandlimitedSpace.of(N)
    scale = np.concatenate([[1.0], np.full(2 * N, np.sqrt(2))])
    branch = MlpParams((scale[:, None] * packed_analysis_matrix(2 * N + 1, N),), (np.zeros(2 * N + 1),), "identity")
    return DeepOnetModel(real_fourier_basis(space), branch, N)


def test_deeponet_matches_linear_sno():
    N = 5
    model = linear_deeponet(N)
    f = BandlimitedSpace.of(N).random_function(np.random.default_rng(6))
    out = deeponet_apply(model, sample(f, SampleGrid(2 * N + 1)))
    sno = SnoModel(N, N, MlpParams.identity(2 * N + 1))
    assert np.allclose(out.coeffs, sno_apply(sno, f).coeffs, atol=1e-10)
    assert np.allclose(pack_isometric(f.coeffs), model.branch(sample(f, SampleGrid(2 * N + 1)).values))


def test_deeponet_zero_branch_and_errors():
    N = 3
    model = linear_deeponet(N)
    zero = DeepOnetModel(model.trunk, MlpParams((np.zeros((7, 7)),), (np.zeros(7),), "identity"), N)
    s = SampleVector(SampleGrid(7), np.ones(7))
    assert deeponet_apply(zero, s).norm() == 0
    with pytest.raises(DimensionError):
        deeponet_apply(model, SampleVector(SampleGrid(9), np.ones(9)))


def test_deeponet_random_sensors_warn_and_alias():
    N = 4
    model = linear_deeponet(N)
    f = BandlimitedSpace.of(N).random_function(np.random.default_rng(7))
    grid = SampleGrid.random(2 * N + 1, np.random.default_rng(8))
    with pytest.warns(NonUniformSensorWarning):
        out = deeponet_apply(model, sample(f, grid))
    assert (out - f).norm() > 1e-2 * f.norm()


# -- activations and the square operator --------------------------------------------

def test_relu_cos_spectrum_closed_form():
    f = cos_mode(AmbientSpace(1), 1)
    spec = activation_spectrum(f, "relu", 200)
    c = spec.coeffs
    mid = 200
    assert c[mid].real == pytest.approx(1 / np.pi, abs=1e-6)
    assert abs(c[mid + 1]) == pytest.approx(0.25, abs=1e-6)
    assert abs(c[mid + 2]) == pytest.approx(1 / (3 * np.pi), abs=1e-6)
    # series oracle: relu(cos t) = 1/pi + cos t / 2 + (2/pi) sum (-1)^{m+1} cos(2 m t) / (4 m^2 - 1)
    for m in range(1, 6):
        assert c[mid + 2 * m].real == pytest.approx((-1) ** (m + 1) / (np.pi * (4 * m * m - 1)), abs=1e-6)
    assert abs(c[mid + 3]) < 1e-6


def test_identity_spectrum_has_no_tail():
    f = BandlimitedSpace.of(6).random_function(np.random.default_rng(1))
    spec = activation_spectrum(f, "identity", 20)
    assert spec.tail_fraction[6] < 1e-25
    with pytest.raises(ValueError):
        activation_spectrum(f, "relu", 3)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), act=st.sampled_from(["relu", "gelu", "tanh"]))
def test_tail_fraction_is_non_increasing(seed, act):
    f = BandlimitedSpace.of(8).random_function(np.random.default_rng(seed), unit=True)
    tail = activation_spectrum(f, act, 60).tail_fraction
    assert np.all(np.diff(tail) <= 1e-15)


def test_relu_of_random_p20_leaks_above_bandwidth():
    f = BandlimitedSpace.of(20).random_function(np.random.default_rng(0), unit=True)
    assert activation_spectrum(f, "relu", 200).tail_fraction[20] > 1e-4


def test_square_operator_examples():
    K = 3
    amb = AmbientSpace(2 * K)
    U = square_operator(K, amb)
    const = PeriodicFunction.from_modes(amb, {0: 1.5})
    assert np.allclose(U(const).coeffs, (const * 1.5).coeffs)
    sq = U(cos_mode(amb, K))
    assert np.allclose(sq.coeffs, PeriodicFunction.from_modes(amb, {0: 0.5, 2 * K: 0.25, -2 * K: 0.25}).coeffs)
    with pytest.raises(DimensionError):
        square_operator(K, AmbientSpace(2 * K - 1))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(0, 10))
def test_square_matches_fine_grid_squaring(seed, K):
    amb = AmbientSpace(2 * K)
    f = BandlimitedSpace(K, amb).random_function(np.random.default_rng(seed), real=False)
    grid = SampleGrid(4 * K + 1)
    oracle = samples_to_coeffs(SampleVector(grid, np.abs(sample(f, grid).values) ** 2), 2 * K)
    assert np.allclose(square_operator(K, amb)(f).coeffs, oracle.coeffs, atol=1e-10 * max(1, f.norm() ** 2))
