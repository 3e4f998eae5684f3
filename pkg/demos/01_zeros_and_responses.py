"""
Zeros, realizations and frequency responses
===========================================

A second-order plant with a non-minimum-phase zero, its state-space
realization, and the direction that makes its output vanish.
"""

import numpy as np

from dynmask import TransferFunction, frequency_grid, frequency_response, invariant_zeros, simulate, tf_to_ss
from dynmask.design import shift_zeros

# plant G(z) = (z - 1.1) / ((z - 0.2)(z - 0.5))
G = TransferFunction([1.0, -1.1], [1.0, -0.7, 0.1])
ss = tf_to_ss(G)
print("A =\n", ss.A)
print("poles:", np.sort(ss.poles().real))

# the zero and its direction (x0, g)
zd = invariant_zeros(ss)[0]
print(f"zero {zd.zero.real:.6f} ({zd.classification}), x0 = {zd.x0.real}, g = {zd.g.real}")

# driving G with g * beta^k from x0 keeps the output at zero, although the input grows
k = np.arange(40)
u = zd.g[0].real * zd.zero.real ** k
y, _ = simulate(ss, u, zd.x0.real)
print(f"|u| at k=39: {abs(u[-1]):.3g}, max |y|: {np.max(np.abs(y)):.2e}")

# moving the zero leaves the poles alone but changes the response
S = shift_zeros(G, 0.2)
omega = frequency_grid(5)
gap = frequency_response(S, omega).response - frequency_response(G, omega).response
for w, d in zip(omega, gap):
    print(f"omega = {w:.3f}   |S - G| = {abs(d):.4f}")
