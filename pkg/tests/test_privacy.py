import numpy as np
import pytest
from scipy.signal import csd, welch

from dynmask import (
    LoopSystems,
    TransferFunction,
    build_loop,
    frequency_grid,
    frequency_response,
    pole_placement_controller,
    run,
)
from dynmask.adversary import ModelStructure, collect_disclosure, identify
from dynmask.design import shift_zeros
from dynmask.privacy import (
    BiasVarianceCurve,
    asymptotic_criterion,
    believed_controller,
    delta_privacy_check,
    empirical_bias_variance,
    input_spectrum_decomposition,
    mse_lower_bound,
    write_curve_csv,
    zero_extractor,
)


def response(sys, omega):
    return frequency_response(sys, omega).response


@pytest.fixture(scope="module")
def noisy_curve():
    plant = TransferFunction([1.0, -1.1], [1.0, -0.7, 0.1])
    systems = LoopSystems(plant, shift_zeros(plant, 0.2), pole_placement_controller(plant))
    curve = empirical_bias_variance(systems, 4000, 50, noise_variance=0.01, seed=11)
    return systems, curve


# -- bias and variance ----------------------------------------------------------------

def test_noise_free_estimate_is_exact_for_cipher(masked):
    curve = empirical_bias_variance(masked, 2000, 3, seed=4)
    assert np.max(curve.variance) <= 1e-12
    assert np.max(np.abs(curve.bias)) <= 1e-6
    assert curve.replicates == 3 and curve.omega.size == 512


def test_needs_two_replicates(masked):
    with pytest.raises(ValueError):
        empirical_bias_variance(masked, 2000, 1)


def test_unreliable_monte_carlo(masked):
    # twenty samples are too few for the structure, so every replicate fails
    with pytest.raises(RuntimeError, match="unreliable Monte Carlo"):
        empirical_bias_variance(masked, 20, 4, structure=ModelStructure(2, 4))


def test_noisy_bias_is_relative_to_cipher(noisy_curve):
    systems, curve = noisy_curve
    gap = np.abs(response(systems.cipher, curve.omega) - response(systems.plant, curve.omega))
    assert 10 * np.max(np.abs(curve.bias)) <= np.max(gap)
    assert np.all(curve.variance >= 0)


def test_mean_estimate_offset_from_plant(noisy_curve):
    systems, curve = noisy_curve
    k = np.argmin(np.abs(curve.omega - np.pi / 4))
    offset = abs(curve.mean[k] - response(systems.plant, curve.omega[k:k + 1])[0])
    gap = abs(response(systems.cipher, curve.omega[k:k + 1])[0]
              - response(systems.plant, curve.omega[k:k + 1])[0])
    assert offset == pytest.approx(gap, rel=0.2)


# -- MSE bound ---------------------------------------------------------------------------

def test_mse_bound_holds_noisy(noisy_curve):
    systems, curve = noisy_curve
    lb = mse_lower_bound(curve, systems.plant, systems.cipher)
    assert lb.holds


def test_mse_bound_unbiased_case(plant_tf, cipher_tf, rng):
    omega = frequency_grid(64)
    S = response(cipher_tf, omega)
    est = S + 0.01 * (rng.normal(size=(400, 64)) + 1j * rng.normal(size=(400, 64)))
    mean = est.mean(axis=0)
    curve = BiasVarianceCurve(omega, mean, np.zeros(64), np.mean(np.abs(est - mean) ** 2, axis=0),
                              est, 1000)
    lb = mse_lower_bound(curve, plant_tf, cipher_tf)
    G = response(plant_tf, omega)
    np.testing.assert_allclose(lb.bound, np.abs(S - G) ** 2 + curve.variance)
    assert lb.holds


def test_mse_bound_without_mask_is_variance(plant_tf, rng):
    omega = frequency_grid(64)
    G = response(plant_tf, omega)
    est = G + 0.01 * rng.normal(size=(200, 64))
    mean = est.mean(axis=0)
    var = np.mean(np.abs(est - mean) ** 2, axis=0)
    curve = BiasVarianceCurve(omega, mean, np.zeros(64), var, est, 1000)
    np.testing.assert_allclose(mse_lower_bound(curve, plant_tf, plant_tf).bound, var)


def test_static_gap_of_worked_example(plant_tf, cipher_tf):
    gap = response(cipher_tf, [0.0])[0] - response(plant_tf, [0.0])[0]
    assert abs(gap) ** 2 == pytest.approx(0.25)


def test_curve_csv(masked, plant_tf, cipher_tf, tmp_path):
    curve = empirical_bias_variance(masked, 500, 2, grid=frequency_grid(16), seed=1)
    path = tmp_path / "curve.csv"
    write_curve_csv(path, curve, plant_tf, cipher_tf)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("omega,re_mean") and len(lines) == 17


# -- delta privacy ------------------------------------------------------------------------

def test_zero_is_private_under_mask(masked):
    verdict = delta_privacy_check(zero_extractor(1.1), masked, 0.03, 2000, 5, seed=2)
    assert verdict.mse == pytest.approx(0.04, abs=1e-4)
    assert verdict.private


def test_zero_is_exposed_without_mask(unmasked):
    verdict = delta_privacy_check(zero_extractor(1.1), unmasked, 1e-9, 2000, 5, seed=2)
    assert verdict.mse <= 1e-10
    assert not verdict.private


def test_large_shift_noisy_privacy(plant_tf, controller):
    systems = LoopSystems(plant_tf, shift_zeros(plant_tf, 0.5), controller)
    verdict = delta_privacy_check(zero_extractor(1.1), systems, 0.2, 4000, 50,
                                  noise_variance=0.01, seed=3)
    assert verdict.mse >= 0.2


def test_extractor_undefined_on_plant(masked):
    with pytest.raises(ValueError):
        delta_privacy_check(lambda m: None, masked, 0.1, 500, 2)


# -- believed controller --------------------------------------------------------------------

def test_believed_controller_matches_channel_estimate(masked, rng):
    """Cross-spectral estimate of the w -> u map with r = 0 and white e."""
    n = 80_000
    trace = run(build_loop(masked), None, None, rng.normal(size=n))
    w, u = trace.w[1000:, 0], trace.u[1000:, 0]
    nper = 1260
    f, Pww = welch(w, fs=2 * np.pi, nperseg=nper)
    _, Pwu = csd(w, u, fs=2 * np.pi, nperseg=nper)
    omega = f[::10]
    assert np.allclose(omega, frequency_grid(64))
    estimate = (Pwu / Pww)[::10]
    Cbar = believed_controller(masked.plant, masked.cipher, masked.controller, omega)
    exact = response(Cbar, omega)
    assert np.max(np.abs(estimate - exact) / np.abs(exact)) <= 0.05


def test_believed_controller_asymmetric(masked):
    omega = frequency_grid(64)
    a = response(believed_controller(masked.plant, masked.cipher, masked.controller), omega)
    b = response(believed_controller(masked.cipher, masked.plant, masked.controller), omega)
    assert np.max(np.abs(a - b)) > 1e-3


def test_believed_controller_without_mask_is_controller(unmasked, controller):
    omega = frequency_grid(64)
    Cbar = believed_controller(unmasked.plant, unmasked.cipher, controller, omega)
    Cy = response(controller, omega)[:, 0, 0]
    np.testing.assert_allclose(response(Cbar, omega), Cy, atol=1e-12)


def test_believed_controller_singular_return_difference():
    one = TransferFunction([1.0], [1.0])
    with pytest.raises(ValueError, match="singular"):
        believed_controller(TransferFunction([2.0], [1.0]), one, one, frequency_grid(8))


# -- spectrum decomposition ------------------------------------------------------------------

def test_spectrum_parts_vanish(masked):
    no_noise = input_spectrum_decomposition(masked, noise_variance=0.0)
    assert not np.any(no_noise.noise_part)
    no_ref = input_spectrum_decomposition(masked, reference_variance=0.0, noise_variance=0.1)
    assert not np.any(no_ref.reference_part)
    np.testing.assert_allclose(no_ref.total, no_ref.noise_part + no_ref.reference_part, atol=1e-9)


def test_spectrum_matches_averaged_periodogram(masked):
    n, reps = 1024, 100
    psd = np.zeros(n // 2 + 1)
    for i in range(reps):
        rng = np.random.default_rng(1000 + i)
        trace = run(build_loop(masked), rng.normal(size=n), None, np.sqrt(0.1) * rng.normal(size=n))
        f, p = welch(trace.u[:, 0], fs=2 * np.pi, nperseg=n, window="boxcar")
        psd += p / reps
    # one-sided density with fs = 2 pi; white noise of variance s2 has Phi = s2
    psd *= np.pi
    psd[0] *= 2
    psd[-1] *= 2
    spec = input_spectrum_decomposition(masked, f, reference_variance=1.0, noise_variance=0.1)
    bands = np.array_split(np.arange(1, f.size - 1), 32)
    for band in bands:
        assert np.mean(psd[band]) == pytest.approx(np.mean(spec.total[band]), rel=0.1)


# -- asymptotic criterion -----------------------------------------------------------------------

def test_criterion_zero_at_cipher(masked, cipher_tf):
    cost = asymptotic_criterion(cipher_tf, masked)
    assert cost.v1 == pytest.approx(0.0, abs=1e-15) and cost.v2 == 0.0


def test_criterion_penalizes_true_plant(masked, plant_tf):
    assert asymptotic_criterion(plant_tf, masked).v1 > 0


def test_criterion_grid_too_coarse(masked, plant_tf):
    with pytest.raises(ValueError, match="256"):
        asymptotic_criterion(plant_tf, masked, frequency_grid(100))


def test_criterion_minimizer_matches_pem(masked, cipher_tf):
    zeros = np.linspace(1.2, 1.4, 201)
    costs = [asymptotic_criterion(TransferFunction([1.0, -b], cipher_tf.den), masked,
                                  noise_variance=0.01).v1 for b in zeros]
    argmin = zeros[int(np.argmin(costs))]
    assert argmin == pytest.approx(1.3, abs=1e-3)
    data, _ = collect_disclosure(masked, 4000, noise_variance=0.01, seed=9)
    pem = identify(data, ModelStructure(1, 2, estimator="pem")).model.zeros()[0].real
    assert pem == pytest.approx(argmin, rel=0.01)


def test_criterion_unit_noise_model(masked, cipher_tf):
    cost = asymptotic_criterion(cipher_tf, masked, noise_variance=0.01, noise_model="unit")
    assert cost.v1 >= 0 and cost.v2 >= 0
    with pytest.raises(ValueError):
        asymptotic_criterion(cipher_tf, masked, noise_model="wrong")
