"""The two-stage adversary: eavesdrop and identify, then inject a zero-dynamics attack."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.signal import lfilter

from ._rng import make_rng
from .lti import (
    StateSpace,
    TransferFunction,
    ZeroData,
    as_ss,
    as_tf,
    invariant_zeros,
    simulate,
)
from .loop import (
    DetectorReport,
    LoopSystems,
    LoopTrace,
    build_loop,
    detect,
    performance_energy,
    run,
)

__all__ = [
    "DisclosureSet",
    "ModelStructure",
    "EstimationResult",
    "AttackPlan",
    "AttackExperiment",
    "eavesdrop",
    "identify",
    "collect_disclosure",
    "synthesize_zda",
    "run_attack_experiment",
    "structure_for",
]


class DisclosureSet:
    """Append-only record of the ``(u_k, w_k)`` pairs seen on the channel."""

    def __init__(self, u=None, w=None):
        self._u: list = []
        self._w: list = []
        if u is not None or w is not None:
            self.extend(u, w)

    def append(self, u_k, w_k) -> None:
        self._u.append(np.atleast_1d(np.asarray(u_k, dtype=float)).copy())
        self._w.append(np.atleast_1d(np.asarray(w_k, dtype=float)).copy())

    def extend(self, u, w) -> None:
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        if len(u) != len(w):
            raise ValueError("u and w streams must have equal length")
        for uk, wk in zip(u, w):
            self.append(uk, wk)

    def __len__(self):
        return len(self._u)

    @property
    def u(self) -> np.ndarray:
        return np.array(self._u).reshape(len(self), -1)

    @property
    def w(self) -> np.ndarray:
        return np.array(self._w).reshape(len(self), -1)


def eavesdrop(trace: LoopTrace) -> DisclosureSet:
    """Only the control signal ``u`` and the channel signal ``w`` are disclosed."""
    return DisclosureSet(trace.u, trace.w)


@dataclass(frozen=True)
class ModelStructure:
    """Model orders and estimator choice.

    ``nb`` is the number of zeros and ``nf`` the number of poles, so the
    model is ``(b_0 z^nb + ... + b_nb) / (z^nf + f_1 z^(nf-1) + ... + f_nf)``.
    ``estimator`` is ``"arx"`` (least squares) or ``"pem"`` (prediction-error
    fit by damped Gauss-Newton).  With ``"pem"``, ``noise_model="none"`` gives
    an output-error model and ``"independent"`` adds an AR noise model
    ``1 / D(q)`` of order ``noise_order`` (default ``nf``).
    """

    nb: int
    nf: int
    noise_model: str = "none"
    estimator: str = "arx"
    noise_order: Optional[int] = None
    max_iter: int = 200

    def __post_init__(self):
        if self.nb < 1 or self.nf < self.nb:
            raise ValueError("model structure needs nb >= 1 and nf >= nb")
        if self.noise_model not in ("none", "independent"):
            raise ValueError("noise_model must be 'none' or 'independent'")
        if self.estimator not in ("arx", "pem"):
            raise ValueError("estimator must be 'arx' or 'pem'")

    @property
    def delay(self) -> int:
        return self.nf - self.nb

    @property
    def n_noise(self) -> int:
        if self.estimator != "pem" or self.noise_model == "none":
            return 0
        return self.nf if self.noise_order is None else self.noise_order


def structure_for(plant, estimator: str = "arx", noise_model: str = "none") -> ModelStructure:
    """The structure an adversary knowing the plant's orders would choose."""
    tf = as_tf(plant)
    return ModelStructure(len(tf.num) - 1, tf.order, noise_model=noise_model, estimator=estimator)


@dataclass(frozen=True, eq=False)
class EstimationResult:
    theta: np.ndarray
    model: TransferFunction
    cost: float
    iterations: int
    converged: bool
    n_samples: int
    structure: ModelStructure
    cost_trace: tuple = ()
    noise_den: Optional[np.ndarray] = None

    @property
    def reliable(self) -> bool:
        return self.converged

    def to_text(self) -> str:
        """Plain-text record: parameters, roots and the per-iteration cost."""
        def fmt(values):
            return " ".join(format(complex(v), ".17g") if np.iscomplexobj(v) else format(float(v), ".17g")
                            for v in values)

        lines = [
            "[estimation]",
            f"estimator = {self.structure.estimator}",
            f"noise_model = {self.structure.noise_model}",
            f"nb = {self.structure.nb}",
            f"nf = {self.structure.nf}",
            f"n_samples = {self.n_samples}",
            f"theta = {fmt(self.theta)}",
            f"numerator = {fmt(self.model.num)}",
            f"denominator = {fmt(self.model.den)}",
            f"zeros = {fmt(self.model.zeros())}",
            f"poles = {fmt(self.model.poles())}",
            f"cost = {self.cost:.17g}",
            f"iterations = {self.iterations}",
            f"converged = {str(self.converged).lower()}",
            f"cost_trace = {fmt(self.cost_trace)}",
        ]
        return "\n".join(lines) + "\n"


def _siso_columns(data: DisclosureSet):
    u, w = data.u, data.w
    if u.shape[1] != 1 or w.shape[1] != 1:
        raise ValueError("identification supports SISO data only")
    return u[:, 0], w[:, 0]


def _arx_regressors(u, w, st: ModelStructure):
    n0 = max(st.nf, st.delay + st.nb)
    N = len(u)
    cols = [-w[n0 - i:N - i] for i in range(1, st.nf + 1)]
    cols += [u[n0 - st.delay - j:N - st.delay - j] for j in range(st.nb + 1)]
    return np.column_stack(cols), w[n0:]


def _check_excitation(Phi):
    s = np.linalg.svd(Phi, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise ValueError("input not persistently exciting")


def _split(theta, st: ModelStructure):
    f = theta[: st.nf]
    b = theta[st.nf: st.nf + st.nb + 1]
    dn = theta[st.nf + st.nb + 1:]
    return f, b, dn


def _model(theta, st):
    f, b, _ = _split(theta, st)
    return TransferFunction(b, np.concatenate([[1.0], f]))


def _stabilize(a):
    """Reflect roots of a monic polynomial into the unit disk."""
    r = np.roots(a)
    if r.size == 0 or np.all(np.abs(r) < 1.0):
        return a
    r = np.where(np.abs(r) >= 1.0, 0.99 / np.conj(r), r)
    return np.real(np.poly(r))


def _residuals(theta, u, w, st):
    f, b, dn = _split(theta, st)
    a_full = np.concatenate([[1.0], f])
    b_full = np.concatenate([np.zeros(st.delay), b])
    w_hat = lfilter(b_full, a_full, u)
    err = w - w_hat
    if st.n_noise:
        eps = lfilter(np.concatenate([[1.0], dn]), [1.0], err)
    else:
        eps = err
    return eps, err, w_hat, a_full, dn


def _jacobian(u, err, w_hat, a_full, dn, st):
    N = len(u)
    psi_u = lfilter([1.0], a_full, u)
    psi_w = lfilter([1.0], a_full, w_hat)

    def shift(x, s):
        out = np.zeros(N)
        out[s:] = x[: N - s] if s else x
        return out

    cols = [shift(psi_w, i) for i in range(1, st.nf + 1)]           # d eps / d f_i
    cols += [-shift(psi_u, st.delay + j) for j in range(st.nb + 1)]  # d eps / d b_j
    J = np.column_stack(cols)
    if st.n_noise:
        J = lfilter(np.concatenate([[1.0], dn]), [1.0], J, axis=0)
        J = np.hstack([J, np.column_stack([shift(err, i) for i in range(1, st.n_noise + 1)])])
    return J


def _pem(u, w, st: ModelStructure, theta0):
    N = len(u)

    def cost(th):
        eps = _residuals(th, u, w, st)[0]
        v = float(eps @ eps) / N
        return v if np.isfinite(v) else np.inf

    theta = theta0
    V = cost(theta)
    trace = [V]
    mu = 1e-3
    converged = False
    it = 0
    for it in range(1, st.max_iter + 1):
        if V <= 1e-28:
            converged = True
            break
        eps, err, w_hat, a_full, dn = _residuals(theta, u, w, st)
        J = _jacobian(u, err, w_hat, a_full, dn, st)
        JtJ = J.T @ J
        grad = J.T @ eps
        scale = np.diag(JtJ).copy()
        scale[scale == 0] = 1.0
        accepted = False
        for _ in range(30):
            try:
                step = np.linalg.solve(JtJ + mu * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            cand = theta + step
            Vc = cost(cand)
            if Vc < V:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            # no descent direction left at machine precision
            converged = True
            break
        rel = (V - Vc) / max(V, 1e-300)
        small_step = np.linalg.norm(step) <= 1e-10 * (1.0 + np.linalg.norm(theta))
        theta, V = cand, Vc
        trace.append(V)
        mu = max(mu / 10.0, 1e-12)
        if rel < 1e-12 or small_step:
            converged = True
            break
    return theta, V, it, converged, tuple(trace)


def identify(data: DisclosureSet, structure: ModelStructure) -> EstimationResult:
    """Fit a model of the ``u -> w`` channel dynamics.

    ARX is solved in closed form by least squares.  PEM starts from the
    ARX solution (with its poles reflected into the unit disk if needed)
    and minimizes the mean squared prediction error with a
    Levenberg-damped Gauss-Newton iteration.  Non-convergence within
    ``structure.max_iter`` iterations is reported, not raised.
    """
    u, w = _siso_columns(data)
    st = structure
    N = len(u)
    if N < 10 * (st.nb + st.nf):
        raise ValueError(f"need at least {10 * (st.nb + st.nf)} samples, got {N}")
    Phi, target = _arx_regressors(u, w, st)
    _check_excitation(Phi)
    theta_arx, *_ = np.linalg.lstsq(Phi, target, rcond=None)
    if st.estimator == "arx":
        resid = target - Phi @ theta_arx
        cost = float(resid @ resid) / len(target)
        return EstimationResult(theta_arx, _model(theta_arx, st), cost, 1, True, N, st, (cost,))
    f0 = _stabilize(np.concatenate([[1.0], theta_arx[: st.nf]]))[1:]
    theta0 = np.concatenate([f0, theta_arx[st.nf:], np.zeros(st.n_noise)])
    theta, V, it, ok, trace = _pem(u, w, st, theta0)
    noise_den = np.concatenate([[1.0], theta[st.nf + st.nb + 1:]]) if st.n_noise else None
    return EstimationResult(theta, _model(theta, st), V, it, ok, N, st, trace, noise_den)


def collect_disclosure(systems: LoopSystems, n_samples: int, *, reference_variance: float = 1.0,
                       noise_variance: float = 0.0, seed: int = 0, replicate: int = 0):
    """Run the benign loop with white-noise excitation and eavesdrop on it.

    Returns ``(DisclosureSet, LoopTrace)``.
    """
    p = systems.n_outputs
    r = make_rng(seed, 1, replicate).normal(0.0, np.sqrt(reference_variance), size=(n_samples, p))
    if noise_variance > 0:
        e = make_rng(seed, 2, replicate).normal(0.0, np.sqrt(noise_variance), size=(n_samples, p))
    else:
        e = np.zeros((n_samples, p))
    engine = build_loop(systems, np.inf, n_samples)
    trace = run(engine, r, None, e)
    return eavesdrop(trace), trace


@dataclass(frozen=True, eq=False)
class AttackPlan:
    """Zero-dynamics attack ``a_k = scale * Re(g beta^(k - k0))`` for ``k >= k0``.

    For a complex zero the conjugate pair is superposed, giving
    ``2 * scale * Re(g beta^(k - k0))`` and initial state ``2 * scale * Re(x0)``.
    """

    source: StateSpace
    zero: ZeroData
    scale: float = 1e-3
    k0: int = 0

    @property
    def beta(self) -> complex:
        return self.zero.zero

    @property
    def _factor(self) -> float:
        return 1.0 if self.zero.is_real else 2.0

    @property
    def initial_state(self) -> np.ndarray:
        """State the source model must hold at step ``k0``."""
        return self._factor * self.scale * np.real(self.zero.x0)

    def signal(self, n_steps: int) -> np.ndarray:
        """Attack sequence for steps ``0 .. n_steps - 1``, shape ``(n_steps, m)``."""
        k = np.arange(n_steps) - self.k0
        out = np.zeros((n_steps, self.zero.g.size))
        on = k >= 0
        powers = self.beta ** k[on].astype(float)
        out[on] = self._factor * self.scale * np.real(np.outer(powers, self.zero.g))
        return out

    def nulling_residual(self, n_steps: int = 50) -> float:
        """Max-norm of the source output when started at :attr:`initial_state`."""
        a = self.signal(self.k0 + n_steps)[self.k0:]
        y, _ = simulate(self.source, a, self.initial_state)
        return float(np.max(np.abs(y)))


def _has_cancellation(tf: TransferFunction, tol: float = 1e-8) -> bool:
    z, p = tf.zeros(), tf.poles()
    return bool(z.size and p.size and np.min(np.abs(z[:, None] - p[None, :])) < tol)


def synthesize_zda(model: Union[StateSpace, TransferFunction], policy: Union[str, int] = "max",
                   amplitude: float = 1e-3, k0: int = 0, check_steps: int = 50) -> AttackPlan:
    """Build a zero-dynamics attack from a model's invariant zeros.

    ``policy`` selects the zero: ``"max"`` or ``"min"`` modulus, or an index
    into :func:`invariant_zeros` (sorted by decreasing modulus).
    """
    ss = as_ss(model)
    if amplitude <= 0:
        raise ValueError("amplitude must be positive")
    try:
        zeros = invariant_zeros(ss)
    except ValueError:
        # a cancelling pair makes the realization non-minimal; name the cause
        if ss.is_siso and _has_cancellation(as_tf(ss)):
            raise ValueError("pole-zero cancellation: zero direction ill-conditioned") from None
        raise
    if not zeros:
        raise ValueError("model has no invariant zeros")
    if policy == "max":
        zd = max(zeros, key=lambda z: abs(z.zero))
    elif policy == "min":
        zd = min(zeros, key=lambda z: abs(z.zero))
    elif isinstance(policy, (int, np.integer)):
        zd = zeros[int(policy)]
    else:
        raise ValueError(f"unknown zero selection policy {policy!r}")
    poles = ss.poles()
    if poles.size and np.min(np.abs(poles - zd.zero)) < 1e-8:
        raise ValueError("pole-zero cancellation: zero direction ill-conditioned")
    plan = AttackPlan(ss, zd, float(amplitude), int(k0))
    resid = plan.nulling_residual(check_steps)
    if resid > 1e-7 * max(1.0, abs(zd.zero) ** check_steps):
        raise ArithmeticError(f"attack does not null its source model (residual {resid:.3e})")
    return plan


@dataclass(frozen=True, eq=False)
class AttackExperiment:
    identification: Optional[EstimationResult]
    plan: AttackPlan
    benign_trace: Optional[LoopTrace]
    attack_trace: LoopTrace
    baseline_trace: LoopTrace
    report: DetectorReport
    attacked_energy: float
    benign_energy: float
    init_target: str

    @property
    def energy_increase(self) -> np.ndarray:
        """Cumulative attacked-minus-benign performance energy per step."""
        za = np.cumsum(np.sum(self.attack_trace.z ** 2, axis=1))
        zb = np.cumsum(np.sum(self.baseline_trace.z ** 2, axis=1))
        return za - zb


def _same_realization(a: StateSpace, b: StateSpace) -> bool:
    return all(np.array_equal(getattr(a, k), getattr(b, k)) for k in "ABCD")


def run_attack_experiment(systems: LoopSystems, n_identify: int, n_attack: int,
                          plan: Optional[AttackPlan] = None, *,
                          structure: Optional[ModelStructure] = None,
                          reference_variance: float = 1.0, noise_variance: float = 0.0,
                          threshold: float = 0.5, placement: str = "d1",
                          zero_policy: Union[str, int] = "max", amplitude: float = 1e-3,
                          k0: int = 0, seed: int = 0, init_target: str = "auto") -> AttackExperiment:
    """Learn, then attack.

    1. Benign run with white reference of ``reference_variance``; the
       adversary eavesdrops ``(u, w)`` and identifies a model (skipped
       when ``plan`` is given).
    2. A zero-dynamics attack is synthesized from the identified model.
    3. The loop is re-run from rest with ``r = 0`` and the attack injected.
       At step ``k0`` the plant-side copy of the attacked model receives
       the attack's initial state: the cipher copy in a masked loop, the
       plant itself when ``S`` and ``G`` coincide (``init_target="auto"``).
    """
    result = None
    benign = None
    if plan is None:
        if structure is None:
            structure = structure_for(systems.plant, "arx" if noise_variance == 0 else "pem")
        data, benign = collect_disclosure(systems, n_identify, reference_variance=reference_variance,
                                          noise_variance=noise_variance, seed=seed)
        result = identify(data, structure)
        plan = synthesize_zda(result.model, zero_policy, amplitude, k0)
    if init_target == "auto":
        init_target = "plant" if _same_realization(systems.plant, systems.cipher) else "cipher"
    p = systems.n_outputs
    if noise_variance > 0:
        e = make_rng(seed, 3).normal(0.0, np.sqrt(noise_variance), size=(n_attack, p))
    else:
        e = np.zeros((n_attack, p))
    a = plan.signal(n_attack)
    engine = build_loop(systems, threshold, n_attack, placement)
    attacked = run(engine, None, a, e, state_schedule={plan.k0: {init_target: plan.initial_state}})
    engine = build_loop(systems, threshold, n_attack, placement)
    baseline = run(engine, None, None, e)
    report = detect(attacked, placement, threshold)
    return AttackExperiment(result, plan, benign, attacked, baseline, report,
                            performance_energy(attacked), performance_energy(baseline), init_target)
