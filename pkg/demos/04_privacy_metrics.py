"""
Bias, variance and privacy of the plant zero
============================================

Monte Carlo identification with measurement noise.  The estimate
converges to the cipher plant, so its error against the true plant does
not shrink with more data.
"""

import numpy as np

from dynmask import LoopSystems, TransferFunction, frequency_grid, frequency_response, pole_placement_controller
from dynmask.design import shift_zeros
from dynmask.privacy import (
    asymptotic_criterion,
    delta_privacy_check,
    empirical_bias_variance,
    input_spectrum_decomposition,
    mse_lower_bound,
    zero_extractor,
)

G = TransferFunction([1.0, -1.1], [1.0, -0.7, 0.1])
S = shift_zeros(G, 0.2)
systems = LoopSystems(G, S, pole_placement_controller(G))
omega = frequency_grid(64)

curve = empirical_bias_variance(systems, 2000, 20, omega, noise_variance=0.01, seed=3)
bound = mse_lower_bound(curve, G, S)
gap = np.abs(frequency_response(S, omega).response - frequency_response(G, omega).response) ** 2
print("max |bias vs S|     :", f"{np.max(np.abs(curve.bias)):.3e}")
print("mean MSE vs G       :", f"{bound.empirical_mse.mean():.4f}")
print("mean |S - G|^2 + P  :", f"{(gap + curve.variance).mean():.4f}")
print("bound holds everywhere:", bound.holds)

verdict = delta_privacy_check(zero_extractor(1.1), systems, 0.03, 2000, 10, noise_variance=0.01, seed=3)
print(f"zero MSE {verdict.mse:.4f} -> 0.03-private: {verdict.private}")

# input spectrum and the limit cost of two candidate models
spec = input_spectrum_decomposition(systems, omega, noise_variance=0.01)
print("noise share of input power:", f"{spec.noise_part.sum() / spec.total.sum():.3%}")
for label, model in (("S", S), ("G", G)):
    print(f"limit cost at {label}: {asymptotic_criterion(model, systems, noise_variance=0.01).v1:.4e}")
