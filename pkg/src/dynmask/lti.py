"""Discrete-time LTI systems: representations, simulation and invariant zeros.

Polynomials are stored in descending powers of ``z`` and transfer functions
are kept with a monic denominator.  State-space realizations are immutable;
arrays are made read-only on construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "TransferFunction",
    "StateSpace",
    "ZeroData",
    "FrequencyResponse",
    "tf_to_ss",
    "ss_to_tf",
    "simulate",
    "invariant_zeros",
    "frequency_response",
    "frequency_grid",
    "is_stable",
    "is_minimal",
    "markov_parameters",
    "controllability_matrix",
    "observability_matrix",
]

_COEF_TOL = 1e-12
STABILITY_MARGIN = 1e-10
RANK_TOL = 1e-8


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _trim(p, rtol=0.0):
    """Drop leading coefficients that are (numerically) zero."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.size == 0:
        return np.zeros(1)
    scale = np.max(np.abs(p)) if p.size else 0.0
    tol = max(rtol * scale, 0.0)
    nz = np.flatnonzero(np.abs(p) > tol)
    if nz.size == 0:
        return np.zeros(1)
    return p[nz[0]:]


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """SISO rational function ``num(z) / den(z)``.

    The denominator is normalized to be monic.  Only proper functions are
    accepted.
    """

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = _trim(self.num)
        den = _trim(self.den)
        if den[0] == 0.0:
            raise ValueError("denominator must have a nonzero leading coefficient")
        if len(num) > len(den):
            raise ValueError("improper transfer function")
        lead = den[0]
        object.__setattr__(self, "num", _readonly(num / lead))
        object.__setattr__(self, "den", _readonly(den / lead))

    @property
    def order(self) -> int:
        return len(self.den) - 1

    @property
    def relative_degree(self) -> int:
        return len(self.den) - len(self.num)

    def zeros(self) -> np.ndarray:
        if np.all(self.num == 0.0):
            return np.zeros(0, dtype=complex)
        return np.roots(self.num).astype(complex)

    def poles(self) -> np.ndarray:
        return np.roots(self.den).astype(complex)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return np.polyval(self.num, z) / np.polyval(self.den, z)

    def __repr__(self):
        return f"TransferFunction(num={self.num.tolist()}, den={self.den.tolist()})"


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Realization ``x[k+1] = A x[k] + B u[k]``, ``y[k] = C x[k] + D u[k]``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if np.asarray(self.A).size == 0:
            A = np.zeros((0, 0))
        n = A.shape[0]
        p, m = D.shape
        B = np.asarray(self.B, dtype=float).reshape(n, m)
        C = np.asarray(self.C, dtype=float).reshape(p, n)
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D)):
            object.__setattr__(self, name, _readonly(val))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    @property
    def is_siso(self) -> bool:
        return self.n_inputs == 1 and self.n_outputs == 1

    def poles(self) -> np.ndarray:
        if self.n_states == 0:
            return np.zeros(0, dtype=complex)
        return np.linalg.eigvals(self.A)

    def __repr__(self):
        return (f"StateSpace(n={self.n_states}, m={self.n_inputs}, "
                f"p={self.n_outputs})")


@dataclass(frozen=True, eq=False)
class ZeroData:
    """An invariant zero together with its state and input directions."""

    zero: complex
    x0: np.ndarray
    g: np.ndarray

    @property
    def unstable(self) -> bool:
        return abs(self.zero) > 1.0

    @property
    def classification(self) -> str:
        return "unstable" if self.unstable else "stable"

    @property
    def is_real(self) -> bool:
        return abs(np.imag(self.zero)) <= 1e-12 * max(1.0, abs(self.zero))


@dataclass(frozen=True, eq=False)
class FrequencyResponse:
    omega: np.ndarray
    response: np.ndarray

    def __len__(self):
        return len(self.omega)


System = Union[TransferFunction, StateSpace]


def tf_to_ss(tf: TransferFunction) -> StateSpace:
    """Controllable canonical realization of a proper SISO transfer function."""
    if not isinstance(tf, TransferFunction):
        raise TypeError("expected a TransferFunction")
    den = tf.den
    n = len(den) - 1
    num = np.concatenate([np.zeros(n + 1 - len(tf.num)), tf.num])
    d = num[0]
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[d]])
    A = np.zeros((n, n))
    A[0, :] = -den[1:]
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    C = (num[1:] - d * den[1:]).reshape(1, n)
    return StateSpace(A, B, C, [[d]])


def ss_to_tf(ss: StateSpace) -> TransferFunction:
    """Transfer function ``C (zI - A)^{-1} B + D`` of a SISO realization.

    Uses ``det(zI - A + BC) = det(zI - A) (1 + C (zI - A)^{-1} B)``.
    """
    if not ss.is_siso:
        raise ValueError("SISO only")
    d = ss.D[0, 0]
    if ss.n_states == 0:
        return TransferFunction([d], [1.0])
    den = np.real(np.poly(ss.A))
    closed = np.real(np.poly(ss.A - ss.B @ ss.C))
    num = closed - den + d * den
    # leading entries are exactly zero in exact arithmetic when D == 0
    scale = max(np.max(np.abs(num)), 1.0)
    num = _trim(np.where(np.abs(num) <= 1e-13 * scale, 0.0, num))
    return TransferFunction(num, den)


def markov_parameters(ss: StateSpace, count: int) -> np.ndarray:
    """Impulse response ``D, CB, CAB, ...`` of length ``count``; shape (count, p, m)."""
    out = np.zeros((count, ss.n_outputs, ss.n_inputs))
    if count == 0:
        return out
    out[0] = ss.D
    AkB = ss.B.copy()
    for k in range(1, count):
        out[k] = ss.C @ AkB
        AkB = ss.A @ AkB
    return out


def simulate(ss: StateSpace, u, x_init=None):
    """Run the state recursion over the input sequence.

    Parameters
    ----------
    ss : StateSpace
    u : array_like
        Input of shape ``(N,)`` (single input) or ``(N, m)``.
    x_init : array_like, optional
        Initial state, zeros by default.

    Returns
    -------
    y : ndarray
        Output of shape ``(N,)`` when both ``u`` is 1-D and the system is
        single-output, otherwise ``(N, p)``.
    x : ndarray
        States ``x[0] .. x[N]``, shape ``(N + 1, n)``.
    """
    u = np.asarray(u)
    squeeze = u.ndim == 1
    u2 = u.reshape(len(u), -1) if u.ndim <= 1 else u
    if u2.ndim != 2 or u2.shape[1] != ss.n_inputs:
        raise ValueError(f"input has shape {u.shape}, system expects {ss.n_inputs} input(s)")
    N = u2.shape[0]
    if N < 1:
        raise ValueError("input sequence must be non-empty")
    n = ss.n_states
    if x_init is None:
        x = np.zeros(n, dtype=np.result_type(u2, float))
    else:
        x = np.asarray(x_init).reshape(-1)
        if x.shape != (n,):
            raise ValueError(f"initial state must have dimension {n}")
    dtype = np.result_type(u2, x, float)
    x = x.astype(dtype)
    states = np.zeros((N + 1, n), dtype=dtype)
    y = np.zeros((N, ss.n_outputs), dtype=dtype)
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    for k in range(N):
        states[k] = x
        y[k] = C @ x + D @ u2[k]
        x = A @ x + B @ u2[k]
    states[N] = x
    if squeeze and ss.n_outputs == 1:
        y = y[:, 0]
    return y, states


def controllability_matrix(ss: StateSpace) -> np.ndarray:
    n = ss.n_states
    blocks = [ss.B]
    for _ in range(1, n):
        blocks.append(ss.A @ blocks[-1])
    return np.hstack(blocks) if n else np.zeros((0, ss.n_inputs))


def observability_matrix(ss: StateSpace) -> np.ndarray:
    n = ss.n_states
    blocks = [ss.C]
    for _ in range(1, n):
        blocks.append(blocks[-1] @ ss.A)
    return np.vstack(blocks) if n else np.zeros((ss.n_outputs, 0))


def _full_rank(M, n):
    if n == 0:
        return True
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return False
    return int(np.sum(s > RANK_TOL * s[0])) == n


def is_minimal(ss: StateSpace) -> bool:
    """Controllability and observability rank tests (tolerance 1e-8 * sigma_max)."""
    n = ss.n_states
    return (_full_rank(controllability_matrix(ss), n)
            and _full_rank(observability_matrix(ss), n))


def is_stable(ss: System) -> bool:
    if isinstance(ss, TransferFunction):
        ss = tf_to_ss(ss)
    if ss.n_states == 0:
        return True
    return bool(np.all(np.abs(np.linalg.eigvals(ss.A)) < 1.0 - STABILITY_MARGIN))


def rosenbrock(ss: StateSpace, beta) -> np.ndarray:
    """System matrix ``[[beta I - A, -B], [C, D]]`` evaluated at ``beta``."""
    n = ss.n_states
    top = np.hstack([beta * np.eye(n) - ss.A, -ss.B])
    bottom = np.hstack([ss.C, ss.D]).astype(complex)
    return np.vstack([top, bottom])


def _normalize_direction(v, n):
    v = v / np.linalg.norm(v)
    g = v[n:]
    ref = next((c for c in g if abs(c) > 1e-12), None)
    if ref is None:
        ref = next((c for c in v if abs(c) > 1e-12), 1.0)
    v = v * (abs(ref) / ref)
    return v


def _rank(X, tol):
    if X.size == 0:
        return 0
    return int(np.sum(np.linalg.svd(X, compute_uv=False) > tol))


def _deflate(A, B, C, D, tol):
    """Remove the infinite zero structure until ``D`` has full row rank.

    Each pass rotates the outputs so that the rows without feedthrough are
    separated, then restricts the state to the kernel of those rows.  The
    state equations leaving that kernel become new outputs.  Finite zeros
    of the pencil are unchanged by every pass.
    """
    while True:
        n, p = A.shape[0], D.shape[0]
        U, sv, _ = np.linalg.svd(D) if D.size else (np.eye(p), np.zeros(0), None)
        rho = int(np.sum(sv > tol))
        if rho == p or n == 0:
            return A, B, C, D
        CD = U.T @ np.hstack([C, D])
        C_keep, D_keep, C_free = CD[:rho, :n], CD[:rho, n:], CD[rho:, :n]
        _, sc, vh = np.linalg.svd(C_free)
        mu = int(np.sum(sc > tol))
        if mu == 0:
            # outputs identically zero along these rows: drop them
            C, D = C_keep, D_keep
            continue
        W = np.vstack([vh[mu:], vh[:mu]]).T  # leading columns span ker(C_free)
        A1, B1, C1 = W.T @ A @ W, W.T @ B, C_keep @ W
        k = n - mu
        A, B = A1[:k, :k], B1[:k]
        C = np.vstack([C1[:, :k], A1[k:, :k]])
        D = np.vstack([D_keep, B1[k:]])


def _finite_zeros(ss: StateSpace) -> np.ndarray:
    scale = max(1.0, np.linalg.norm(np.block([[ss.A, ss.B], [ss.C, ss.D]])))
    tol = 1e-10 * scale
    A, B, C, D = (np.asarray(x, dtype=float) for x in (ss.A, ss.B, ss.C, ss.D))
    A, B, C, D = _deflate(A, B, C, D, tol)
    # the dual system removes the remaining column deficiency of D
    At, Ct, Bt, Dt = _deflate(A.T, C.T, B.T, D.T, tol)
    A, B, C, D = At.T, Bt.T, Ct.T, Dt.T
    if A.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    if D.shape[0] != D.shape[1] or _rank(D, tol) < D.shape[0]:
        raise ValueError("system is not of full normal rank; zeros are not isolated")
    return np.linalg.eigvals(A - B @ np.linalg.solve(D, C))


def invariant_zeros(ss: StateSpace) -> list[ZeroData]:
    """Finite invariant zeros of a square minimal system with their directions.

    Zeros are the finite generalized eigenvalues of the pencil
    ``([[A, B], [C, D]], blockdiag(I, 0))``.  The pencil is deflated first
    (see :func:`_deflate`), because perturbed infinite eigenvalues of a
    high relative degree system can land anywhere in the plane and cannot
    be told apart from large finite zeros by modulus.  Directions come from the null
    space of the Rosenbrock matrix at each zero, normalized to unit norm
    with the first significant entry of ``g`` real and positive.  Results
    are sorted by decreasing modulus.
    """
    if isinstance(ss, TransferFunction):
        ss = tf_to_ss(ss)
    n, m, p = ss.n_states, ss.n_inputs, ss.n_outputs
    if p != m:
        raise ValueError("invariant zeros require a square system (p == m)")
    if not is_minimal(ss):
        raise ValueError("zeros ill-defined on non-minimal realization")
    if n == 0:
        return []
    zeros = [complex(z) for z in _finite_zeros(ss)]
    zeros.sort(key=lambda z: (-abs(z), -z.imag))
    normA = np.linalg.norm(ss.A, "fro")
    out = []
    for z in zeros:
        if abs(z.imag) <= 1e-12 * max(1.0, abs(z)):
            z = complex(z.real, 0.0)
        P = rosenbrock(ss, z)
        _, _, vh = np.linalg.svd(P)
        v = _normalize_direction(vh[-1].conj(), n)
        if z.imag == 0.0:
            v = v.real.astype(complex)
            v = v / np.linalg.norm(v)
        resid = np.linalg.norm(P @ v)
        if resid > 1e-8 * (1.0 + normA):
            raise ArithmeticError(
                f"pencil residual {resid:.3e} too large for zero {z}")
        out.append(ZeroData(z, _readonly(v[:n]), _readonly(v[n:])))
    return out


def frequency_grid(n_points: int = 512) -> np.ndarray:
    """Uniform grid on ``[0, pi]`` in radians per sample."""
    return np.linspace(0.0, np.pi, n_points)


def _check_grid(omega):
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.ndim != 1 or omega.size == 0:
        raise ValueError("frequency grid must be a non-empty 1-D array")
    if np.any(np.diff(omega) <= 0):
        raise ValueError("frequency grid must be strictly increasing")
    if omega[0] < 0.0 or omega[-1] > np.pi:
        raise ValueError("frequency grid must lie within [0, pi]")
    return omega


def frequency_response(sys: System, omega) -> FrequencyResponse:
    """Evaluate a system on ``z = exp(i omega)``.

    SISO systems give a 1-D response; MIMO realizations give shape
    ``(len(omega), p, m)``.
    """
    omega = _check_grid(omega)
    z = np.exp(1j * omega)
    if isinstance(sys, TransferFunction):
        poles = sys.poles()
    else:
        poles = sys.poles()
    if poles.size and np.min(np.abs(z[:, None] - poles[None, :])) < 1e-12:
        raise ValueError("evaluation at pole")
    if isinstance(sys, TransferFunction):
        return FrequencyResponse(_readonly(omega), _readonly(sys(z)))
    n = sys.n_states
    resp = np.empty((len(z), sys.n_outputs, sys.n_inputs), dtype=complex)
    for i, zi in enumerate(z):
        if n:
            resp[i] = sys.C @ np.linalg.solve(zi * np.eye(n) - sys.A, sys.B) + sys.D
        else:
            resp[i] = sys.D
    if sys.is_siso:
        resp = resp[:, 0, 0]
    return FrequencyResponse(_readonly(omega), _readonly(resp))


def as_ss(sys: System) -> StateSpace:
    return tf_to_ss(sys) if isinstance(sys, TransferFunction) else sys


def as_tf(sys: System) -> TransferFunction:
    return sys if isinstance(sys, TransferFunction) else ss_to_tf(sys)


def static_gain(k: float) -> TransferFunction:
    return TransferFunction([k], [1.0])


def tf_from_roots(zeros: Sequence[complex], poles: Sequence[complex], gain: float = 1.0):
    """Build a real transfer function from conjugate-closed root sets."""
    num = gain * np.real(np.poly(zeros)) if len(zeros) else np.array([gain])
    den = np.real(np.poly(poles)) if len(poles) else np.array([1.0])
    return TransferFunction(num, den)
