"""Controller and cipher-plant construction helpers."""

from __future__ import annotations

import numpy as np

from .lti import StateSpace, TransferFunction, as_tf

__all__ = ["pole_placement_controller", "shift_zeros", "feedback_controller", "zero_controller"]


def _conv_matrix(p, ncols):
    """Matrix T with T @ x == np.convolve(p, x) for len(x) == ncols."""
    p = np.asarray(p, dtype=float)
    T = np.zeros((len(p) + ncols - 1, ncols))
    for j in range(ncols):
        T[j:j + len(p), j] = p
    return T


def _row_realization(nums, den) -> StateSpace:
    """Observable canonical realization of ``[n_1/den, ..., n_m/den]``."""
    den = np.asarray(den, dtype=float)
    den = den / den[0]
    n = len(den) - 1
    padded = []
    for num in nums:
        num = np.atleast_1d(np.asarray(num, dtype=float))
        if len(num) > n + 1:
            raise ValueError("improper transfer function")
        padded.append(np.concatenate([np.zeros(n + 1 - len(num)), num]))
    m = len(padded)
    D = np.array([[p[0] for p in padded]])
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, m)), np.zeros((1, 0)), D)
    A = np.zeros((n, n))
    A[:, 0] = -den[1:]
    A[:-1, 1:] = np.eye(n - 1)
    B = np.column_stack([p[1:] - p[0] * den[1:] for p in padded])
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    return StateSpace(A, B, C, D)


def feedback_controller(feedback: TransferFunction, reference: TransferFunction) -> StateSpace:
    """Controller ``u = feedback(q) y + reference(q) r`` with stacked input ``[y; r]``."""
    den = np.polymul(feedback.den, reference.den)
    nums = [np.polymul(feedback.num, reference.den), np.polymul(reference.num, feedback.den)]
    return _row_realization(nums, den)


def zero_controller() -> StateSpace:
    """Open loop: ``u = 0`` regardless of ``[y; r]``."""
    return StateSpace(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((1, 0)), [[0.0, 0.0]])


def pole_placement_controller(plant, radius: float = 0.6) -> StateSpace:
    """Two-degree-of-freedom polynomial controller for a SISO plant.

    Solves ``A R + B S = (z - radius)^(n_cl)`` for the feedback part and
    scales the reference path for unit static gain (when the plant has no
    zero at ``z = 1``).  The control law is ``R u = -S y + T r``.
    """
    tf = as_tf(plant)
    A, B = tf.den, tf.num
    n = tf.order
    if n == 0:
        raise ValueError("pole placement needs a dynamic plant")
    # strictly proper plant: proper controller; biproper plant: strictly proper controller
    nr = n - 1 if tf.relative_degree >= 1 else n
    ns = n - 1
    ncl = n + nr
    target = np.real(np.poly(np.full(ncl, radius)))
    # unknowns: r_1..r_nr (R monic), s_0..s_ns
    Bp = np.concatenate([np.zeros(n + 1 - len(B)), B])
    MA = _conv_matrix(A, nr + 1)
    MB = _conv_matrix(Bp, ns + 1)
    # align on total degree ncl (ncl + 1 coefficients)
    MB = np.vstack([np.zeros((ncl + 1 - MB.shape[0], MB.shape[1])), MB])
    lhs = np.hstack([MA[:, 1:], MB])
    rhs = target - MA[:, 0]
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if np.linalg.norm(lhs @ sol - rhs) > 1e-8 * (1 + np.linalg.norm(rhs)):
        raise ValueError("pole placement failed: plant numerator and denominator share a factor")
    R = np.concatenate([[1.0], sol[:nr]])
    S = sol[nr:]
    b1 = np.polyval(B, 1.0)
    t0 = np.polyval(target, 1.0) / b1 if abs(b1) > 1e-8 else 1.0
    return _row_realization([-S, [t0]], R)


def shift_zeros(plant, delta: float) -> TransferFunction:
    """Cipher plant with the plant's poles and each zero moved by ``delta``.

    The leading numerator coefficient is kept, so a pole-matched cipher
    differs from the plant only in its zeros.
    """
    tf = as_tf(plant)
    zeros = tf.zeros()
    if zeros.size == 0:
        raise ValueError("plant has no zeros to shift")
    num = tf.num[0] * np.real(np.poly(zeros + delta))
    return TransferFunction(num, tf.den)
