"""Privacy of plant properties against the eavesdropping adversary.

Expectations are Monte Carlo averages over seeded noise realizations.
Variances use the population (1/R) normalization so that the empirical
MSE splits exactly into squared bias plus variance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.integrate import trapezoid

from .adversary import ModelStructure, collect_disclosure, identify, structure_for
from .lti import StateSpace, TransferFunction, as_tf, frequency_grid, frequency_response
from .loop import LoopSystems

__all__ = [
    "BiasVarianceCurve",
    "MSEBound",
    "SpectrumDecomposition",
    "PrivacyVerdict",
    "AsymptoticCost",
    "empirical_bias_variance",
    "mse_lower_bound",
    "delta_privacy_check",
    "zero_extractor",
    "believed_controller",
    "input_spectrum_decomposition",
    "asymptotic_criterion",
    "write_curve_csv",
]

MAX_FAILURE_RATE = 0.10


@dataclass(frozen=True, eq=False)
class BiasVarianceCurve:
    """Monte Carlo statistics of the adversary's frequency-response estimate.

    ``bias`` is measured against the cipher plant ``S`` (the data-generating
    mechanism seen on the channel).  ``estimates`` keeps every successful
    replicate, shape ``(R, len(omega))``.
    """

    omega: np.ndarray
    mean: np.ndarray
    bias: np.ndarray
    variance: np.ndarray
    estimates: np.ndarray
    n_samples: int
    failures: int = 0

    @property
    def replicates(self) -> int:
        return self.estimates.shape[0]

    def mse_vs(self, system) -> np.ndarray:
        """Empirical ``E|G_hat - system|^2`` on the grid."""
        ref = frequency_response(system, self.omega).response
        return np.mean(np.abs(self.estimates - ref) ** 2, axis=0)


def _fit_replicates(systems, n_samples, replicates, structure, reference_variance,
                    noise_variance, seed):
    """Identify ``replicates`` times; returns (models, failures)."""
    models = []
    failures = 0
    for i in range(replicates):
        data, _ = collect_disclosure(systems, n_samples, reference_variance=reference_variance,
                                     noise_variance=noise_variance, seed=seed, replicate=i)
        try:
            res = identify(data, structure)
        except (ValueError, np.linalg.LinAlgError):
            failures += 1
            continue
        if not res.converged:
            failures += 1
            continue
        models.append(res.model)
    if failures > MAX_FAILURE_RATE * replicates:
        raise RuntimeError(f"unreliable Monte Carlo: {failures} of {replicates} identifications failed")
    return models, failures


def _default_structure(systems, noise_variance):
    return structure_for(systems.plant, "arx" if noise_variance == 0 else "pem")


def empirical_bias_variance(systems: LoopSystems, n_samples: int, replicates: int, grid=None, *,
                            reference_variance: float = 1.0, noise_variance: float = 0.0,
                            structure: Optional[ModelStructure] = None,
                            seed: int = 0) -> BiasVarianceCurve:
    if replicates < 2:
        raise ValueError("need at least two replicates")
    omega = frequency_grid() if grid is None else np.asarray(grid, dtype=float)
    structure = structure or _default_structure(systems, noise_variance)
    models, failures = _fit_replicates(systems, n_samples, replicates, structure,
                                       reference_variance, noise_variance, seed)
    est = np.array([frequency_response(m, omega).response for m in models])
    mean = est.mean(axis=0)
    variance = np.mean(np.abs(est - mean) ** 2, axis=0)
    S = frequency_response(systems.cipher, omega).response
    return BiasVarianceCurve(omega, mean, mean - S, variance, est, n_samples, failures)


@dataclass(frozen=True, eq=False)
class MSEBound:
    omega: np.ndarray
    bound: np.ndarray
    empirical_mse: np.ndarray
    standard_error: np.ndarray
    satisfied: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all(self.satisfied))


def mse_lower_bound(curve: BiasVarianceCurve, plant, cipher, n_se: float = 3.0) -> MSEBound:
    """Finite-sample bound ``| |B_N|^2 - |S - G|^2 | + P_N`` on the MSE against ``G``.

    The empirical MSE is checked against the bound with a slack of
    ``n_se`` standard errors of the Monte Carlo MSE estimate.
    """
    G = frequency_response(plant, curve.omega).response
    S = frequency_response(cipher, curve.omega).response
    bound = np.abs(np.abs(curve.bias) ** 2 - np.abs(S - G) ** 2) + curve.variance
    sq = np.abs(curve.estimates - G) ** 2
    mse = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / np.sqrt(sq.shape[0])
    return MSEBound(curve.omega, bound, mse, se, mse >= bound - n_se * se)


def write_curve_csv(path, curve: BiasVarianceCurve, plant, cipher) -> None:
    lb = mse_lower_bound(curve, plant, cipher)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["omega", "re_mean", "im_mean", "re_bias", "im_bias", "variance",
                         "mse_vs_G", "lower_bound"])
        for i, w in enumerate(curve.omega):
            row = [w, curve.mean[i].real, curve.mean[i].imag, curve.bias[i].real,
                   curve.bias[i].imag, curve.variance[i], lb.empirical_mse[i], lb.bound[i]]
            writer.writerow([format(float(x), ".17g") for x in row])


@dataclass(frozen=True, eq=False)
class PrivacyVerdict:
    name: str
    true_value: complex
    estimates: np.ndarray
    mse: float
    delta: float

    @property
    def private(self) -> bool:
        return self.mse >= self.delta


def zero_extractor(target: complex) -> Callable[[TransferFunction], Optional[complex]]:
    """Property extractor returning the model zero closest to ``target``."""
    def extract(model):
        zeros = as_tf(model).zeros()
        if zeros.size == 0:
            return None
        return complex(zeros[np.argmin(np.abs(zeros - target))])
    return extract


def delta_privacy_check(extractor, systems: LoopSystems, delta: float, n_samples: int,
                        replicates: int, *, name: str = "plant zero",
                        reference_variance: float = 1.0, noise_variance: float = 0.0,
                        structure: Optional[ModelStructure] = None,
                        seed: int = 0) -> PrivacyVerdict:
    """Monte Carlo check of ``E|psi(G_hat) - psi(G)|^2 >= delta``."""
    true_value = extractor(as_tf(systems.plant))
    if true_value is None:
        raise ValueError("extractor undefined on the true plant")
    structure = structure or _default_structure(systems, noise_variance)
    models, _ = _fit_replicates(systems, n_samples, replicates, structure,
                                reference_variance, noise_variance, seed)
    values = [extractor(m) for m in models]
    undefined = sum(v is None for v in values)
    if undefined > MAX_FAILURE_RATE * replicates:
        raise RuntimeError(f"extractor undefined on {undefined} of {replicates} replicates")
    est = np.array([v for v in values if v is not None])
    mse = float(np.mean(np.abs(est - true_value) ** 2))
    return PrivacyVerdict(name, true_value, est, mse, float(delta))


def _feedback_channel(controller) -> TransferFunction:
    if isinstance(controller, StateSpace) and controller.n_inputs == 2:
        c = controller
        controller = StateSpace(c.A, c.B[:, :1], c.C, c.D[:, :1])
    return as_tf(controller)


def believed_controller(plant, cipher, controller, grid=None) -> TransferFunction:
    """Transfer function from ``w`` to ``u`` seen by the adversary.

    The controller side rebuilds ``y_hat = w + (G - S) u`` and applies
    ``u = C_y y_hat + C_r r``, so ``w -> u`` is
    ``(1 - C_y (G - S))^{-1} C_y``.  ``controller`` is either the
    feedback transfer function ``C_y`` or the stacked ``[y; r]`` realization.
    Raises if ``1 - C_y (G - S)`` vanishes at a point of ``grid``.
    """
    G, S, Cy = as_tf(plant), as_tf(cipher), _feedback_channel(controller)
    diff_num = np.polysub(np.polymul(G.num, S.den), np.polymul(S.num, G.den))
    diff_den = np.polymul(G.den, S.den)
    num = np.polymul(Cy.num, diff_den)
    den = np.polysub(np.polymul(Cy.den, diff_den), np.polymul(Cy.num, diff_num))
    if grid is not None:
        z = np.exp(1j * np.asarray(grid, dtype=float))
        ret = 1.0 - Cy(z) * (G(z) - S(z))
        if np.min(np.abs(ret)) < 1e-12:
            raise ValueError("singular return difference 1 - C(G - S) on the evaluation grid")
    return TransferFunction(num, den)


@dataclass(frozen=True, eq=False)
class SpectrumDecomposition:
    omega: np.ndarray
    total: np.ndarray
    reference_part: np.ndarray
    noise_part: np.ndarray


def _closed_loop_input_responses(systems: LoopSystems, omega):
    """Responses of ``r -> u`` and ``e -> u`` for the attack-free loop."""
    G = frequency_response(systems.plant, omega).response
    H = frequency_response(systems.noise_filter, omega).response
    C = frequency_response(systems.controller, omega).response  # (W, 1, 2)
    Cy, Cr = C[:, 0, 0], C[:, 0, 1]
    sens = 1.0 / (1.0 - Cy * G)
    return sens * Cr, sens * Cy * H


def input_spectrum_decomposition(systems: LoopSystems, grid=None, *,
                                 reference_variance: float = 1.0,
                                 noise_variance: float = 0.0) -> SpectrumDecomposition:
    """Input spectrum split into reference-borne and noise-borne parts.

    Spectra follow ``Phi(w) = sum_tau R(tau) exp(-i w tau)``, so white noise
    of variance ``s2`` has the flat spectrum ``s2``.
    """
    omega = frequency_grid() if grid is None else np.asarray(grid, dtype=float)
    Tr, Te = _closed_loop_input_responses(systems, omega)
    ref = reference_variance * np.abs(Tr) ** 2
    noise = noise_variance * np.abs(Te) ** 2
    return SpectrumDecomposition(omega, ref + noise, ref, noise)


class AsymptoticCost(NamedTuple):
    v1: float
    v2: float

    @property
    def total(self) -> float:
        return self.v1 + self.v2


def asymptotic_criterion(model, systems: LoopSystems, grid=None, *,
                         reference_variance: float = 1.0, noise_variance: float = 0.0,
                         noise_model: str = "true") -> AsymptoticCost:
    """Limit of the prediction-error cost for a candidate plant model.

    ``noise_model`` is ``"true"`` (the model's noise filter equals the true
    one, so the cross term and the noise-fit term vanish) or ``"unit"``.
    Integrals over ``[-pi, pi]`` use the trapezoidal rule on ``[0, pi]``
    and conjugate symmetry.
    """
    omega = frequency_grid() if grid is None else np.asarray(grid, dtype=float)
    if omega.size < 256:
        raise ValueError("asymptotic criterion needs at least 256 grid points")
    spec = input_spectrum_decomposition(systems, omega, reference_variance=reference_variance,
                                        noise_variance=noise_variance)
    S = frequency_response(systems.cipher, omega).response
    Gm = frequency_response(model, omega).response
    H0 = frequency_response(systems.noise_filter, omega).response
    if noise_model == "true":
        Hm = H0
        cross = np.zeros_like(S)
        v2_integrand = np.zeros(omega.size)
    elif noise_model == "unit":
        Hm = np.ones_like(S)
        with np.errstate(divide="ignore", invalid="ignore"):
            mismatch = np.abs(H0 - Hm) ** 2
            cross = noise_variance / spec.total * spec.noise_part / spec.total * mismatch
            v2_integrand = noise_variance * mismatch / np.abs(Hm) ** 2 * spec.reference_part / spec.total
    else:
        raise ValueError("noise_model must be 'true' or 'unit'")
    with np.errstate(divide="ignore", invalid="ignore"):
        v1_integrand = np.abs(S - Gm + cross) ** 2 * spec.total / np.abs(Hm) ** 2
    if not (np.all(np.isfinite(v1_integrand)) and np.all(np.isfinite(v2_integrand))):
        raise ValueError("non-finite integrand in asymptotic criterion")
    v1 = 2.0 * trapezoid(v1_integrand, omega)
    v2 = 2.0 * trapezoid(v2_integrand, omega)
    return AsymptoticCost(float(v1), float(v2))
