"""Closed-loop simulation of the dynamic masking architecture.

Plant side: the plant ``G`` (plus filtered noise ``H e``), a digital twin
``v = -G u_tilde`` and the cipher plant ``l = S u_tilde``.  The channel
carries ``w = y + v + l = S u_tilde + H e``.  Controller side: copies of
``G`` and ``S`` driven by the controller's own ``u`` rebuild
``y_hat = w - S u + G u``, which equals ``y`` unless an attack is present.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from ._rng import make_rng
from .lti import StateSpace, as_ss, is_stable

__all__ = [
    "LoopSystems",
    "LoopEngine",
    "LoopTrace",
    "DetectorReport",
    "build_loop",
    "run",
    "detect",
    "performance_energy",
    "calibrate_threshold",
    "SUBSYSTEMS",
    "TRACE_COLUMNS",
]

SUBSYSTEMS = ("plant", "noise", "twin", "cipher", "twin_ctrl", "cipher_ctrl", "controller")
TRACE_COLUMNS = ("r", "u", "a", "u_tilde", "e", "y", "v", "l", "w", "y_hat", "d")
PLACEMENTS = ("d1", "d2")


def _unity(p):
    return StateSpace(np.zeros((0, 0)), np.zeros((0, p)), np.zeros((p, 0)), np.eye(p))


@dataclass(frozen=True, eq=False)
class LoopSystems:
    """The subsystems wired into the masking loop.

    ``controller`` takes the stacked input ``[y; r]`` and returns ``u``.
    ``noise_filter`` defaults to unity.  The performance output is the
    plant state, so no separate performance map is stored.
    """

    plant: StateSpace
    cipher: StateSpace
    controller: StateSpace
    noise_filter: Optional[StateSpace] = None

    def __post_init__(self):
        G = as_ss(self.plant)
        S = as_ss(self.cipher)
        C = as_ss(self.controller)
        H = _unity(G.n_outputs) if self.noise_filter is None else as_ss(self.noise_filter)
        object.__setattr__(self, "plant", G)
        object.__setattr__(self, "cipher", S)
        object.__setattr__(self, "controller", C)
        object.__setattr__(self, "noise_filter", H)
        p, m = G.n_outputs, G.n_inputs
        if (S.n_outputs, S.n_inputs) != (p, m):
            raise ValueError("plant and cipher plant must have equal input/output dimensions")
        if (C.n_outputs, C.n_inputs) != (m, 2 * p):
            raise ValueError(f"controller must map [y; r] ({2 * p} inputs) to {m} output(s)")
        if (H.n_outputs, H.n_inputs) != (p, p):
            raise ValueError("noise filter must be square with the plant's output dimension")
        if not is_stable(S):
            raise ValueError("cipher plant S must be internally stable")
        if not is_stable(H):
            raise ValueError("noise filter must be stable")
        self._loop_gain()  # well-posedness
        Acl = self.closed_loop_matrix()
        eig = np.linalg.eigvals(Acl) if Acl.size else np.zeros(0)
        if np.any(np.abs(eig) >= 1.0 - 1e-10):
            raise ValueError("controller does not stabilize plant")

    @property
    def n_outputs(self):
        return self.plant.n_outputs

    @property
    def n_inputs(self):
        return self.plant.n_inputs

    def _loop_gain(self):
        p, m = self.n_outputs, self.n_inputs
        Dcy = self.controller.D[:, :p]
        L = np.eye(m) - Dcy @ self.plant.D
        if abs(np.linalg.det(L)) < 1e-12:
            raise ValueError("ill-posed feedback loop (I - Dc Dg singular)")
        return np.linalg.inv(L)

    def closed_loop_matrix(self) -> np.ndarray:
        """State matrix of plant and controller in feedback, states ``[x_g; x_c]``."""
        G, C = self.plant, self.controller
        p = self.n_outputs
        M = self._loop_gain()
        Dcy, Bcy = C.D[:, :p], C.B[:, :p]
        Ku_g = M @ Dcy @ G.C       # u = Ku_g x_g + Ku_c x_c
        Ku_c = M @ C.C
        top = np.hstack([G.A + G.B @ Ku_g, G.B @ Ku_c])
        bottom = np.hstack([Bcy @ (G.C + G.D @ Ku_g), C.A + Bcy @ G.D @ Ku_c])
        return np.vstack([top, bottom])


@dataclass(frozen=True, eq=False)
class LoopTrace:
    """Every signal of the loop over one run; arrays have shape ``(N, dim)``.

    ``z`` holds the plant state (the performance output) and ``y_nom`` the
    noise-free, attack-free closed-loop output driven by the same reference.
    """

    r: np.ndarray
    u: np.ndarray
    a: np.ndarray
    u_tilde: np.ndarray
    e: np.ndarray
    y: np.ndarray
    v: np.ndarray
    l: np.ndarray
    w: np.ndarray
    y_hat: np.ndarray
    d: np.ndarray
    z: np.ndarray
    y_nom: np.ndarray
    placement: str = "d1"

    def __len__(self):
        return self.r.shape[0]

    def to_csv(self, path) -> None:
        """Write one row per step with 17 significant digits."""
        header = ["k"]
        cols = []
        for name in TRACE_COLUMNS:
            arr = getattr(self, name)
            if arr.shape[1] == 1:
                header.append(name)
            else:
                header.extend(f"{name}_{i}" for i in range(arr.shape[1]))
            cols.append(arr)
        header.append("z_energy_cum")
        zcum = np.cumsum(np.sum(self.z ** 2, axis=1))
        table = np.hstack(cols + [zcum[:, None]])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for k, row in enumerate(table):
                writer.writerow([k] + [format(x, ".17g") for x in row])


@dataclass(frozen=True, eq=False)
class DetectorReport:
    placement: str
    energy: np.ndarray
    threshold: float
    alarm: bool
    first_alarm_step: Optional[int]

    @property
    def final_energy(self) -> float:
        return float(self.energy[-1]) if self.energy.size else 0.0


def _report(d, placement, threshold) -> DetectorReport:
    energy = np.cumsum(np.sum(np.asarray(d) ** 2, axis=1))
    over = np.flatnonzero(energy > threshold)
    first = int(over[0]) if over.size else None
    energy.setflags(write=False)
    return DetectorReport(placement, energy, float(threshold), first is not None, first)


class LoopEngine:
    """Stateful, single-threaded stepper for the masking loop.

    Use :func:`build_loop` to construct one.  Subsystem states are named by
    :data:`SUBSYSTEMS` and can be overridden with :meth:`set_state`.
    """

    def __init__(self, systems: LoopSystems, threshold: float = 0.5, horizon: int = 100,
                 placement: str = "d1", feedback: str = "y_hat"):
        if placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        if feedback not in ("y_hat", "y"):
            raise ValueError("feedback must be 'y_hat' or 'y'")
        self.systems = systems
        self.threshold = float(threshold)
        self.horizon = int(horizon)
        self.placement = placement
        self.feedback = feedback
        self._M = systems._loop_gain()
        self._models = {
            "plant": systems.plant,
            "noise": systems.noise_filter,
            "twin": systems.plant,
            "cipher": systems.cipher,
            "twin_ctrl": systems.plant,
            "cipher_ctrl": systems.cipher,
            "controller": systems.controller,
        }
        self.reset()

    def reset(self, initial_states: Optional[Mapping[str, np.ndarray]] = None):
        self.k = 0
        self._x = {name: np.zeros(sys.n_states) for name, sys in self._models.items()}
        self._x_nom = np.zeros(self.systems.plant.n_states)
        self._xc_nom = np.zeros(self.systems.controller.n_states)
        self._energy = 0.0
        for name, x in (initial_states or {}).items():
            self.set_state(name, x)

    def set_state(self, name: str, x) -> None:
        if name not in self._x:
            raise KeyError(f"unknown subsystem {name!r}; expected one of {SUBSYSTEMS}")
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != self._x[name].shape:
            raise ValueError(f"state of {name!r} has dimension {self._x[name].size}")
        self._x[name] = x.copy()

    def state(self, name: str) -> np.ndarray:
        return self._x[name].copy()

    def _vec(self, value, dim, what):
        v = np.zeros(dim) if value is None else np.asarray(value, dtype=float).reshape(-1)
        if v.shape != (dim,):
            raise ValueError(f"{what} must have dimension {dim}")
        return v

    def step(self, r_k=None, a_k=None, e_k=None) -> dict:
        """Advance one synchronized tick and return the sample's signals."""
        sys = self.systems
        G, S, H, C = sys.plant, sys.cipher, sys.noise_filter, sys.controller
        p, m = sys.n_outputs, sys.n_inputs
        r = self._vec(r_k, p, "r_k")
        a = self._vec(a_k, m, "a_k")
        e = self._vec(e_k, p, "e_k")
        x = self._x
        Dcy, Dcr = C.D[:, :p], C.D[:, p:]
        Bcy, Bcr = C.B[:, :p], C.B[:, p:]

        h = H.C @ x["noise"] + H.D @ e
        # feedback signal without its u-feedthrough, which is G.D u in both cases
        if self.feedback == "y_hat":
            free = (G.C @ x["plant"] + h - G.C @ x["twin"] + S.C @ x["cipher"]
                    - S.C @ x["cipher_ctrl"] + G.C @ x["twin_ctrl"] + S.D @ a)
        else:
            free = G.C @ x["plant"] + h + G.D @ a
        u = self._M @ (C.C @ x["controller"] + Dcy @ free + Dcr @ r)
        fb = free + G.D @ u
        ut = u + a

        y = G.C @ x["plant"] + G.D @ ut + h
        v = -(G.C @ x["twin"] + G.D @ ut)
        l = S.C @ x["cipher"] + S.D @ ut
        w = y + v + l
        y_hat = w - (S.C @ x["cipher_ctrl"] + S.D @ u) + (G.C @ x["twin_ctrl"] + G.D @ u)

        u_nom = self._M @ (C.C @ self._xc_nom + Dcy @ G.C @ self._x_nom + Dcr @ r)
        y_nom = G.C @ self._x_nom + G.D @ u_nom

        d = (y if self.placement == "d1" else y_hat) - y_nom
        self._energy += float(d @ d)
        z = x["plant"].copy()

        x["plant"] = G.A @ x["plant"] + G.B @ ut
        x["noise"] = H.A @ x["noise"] + H.B @ e
        x["twin"] = G.A @ x["twin"] + G.B @ ut
        x["cipher"] = S.A @ x["cipher"] + S.B @ ut
        x["twin_ctrl"] = G.A @ x["twin_ctrl"] + G.B @ u
        x["cipher_ctrl"] = S.A @ x["cipher_ctrl"] + S.B @ u
        x["controller"] = C.A @ x["controller"] + Bcy @ fb + Bcr @ r
        self._xc_nom = C.A @ self._xc_nom + Bcy @ y_nom + Bcr @ r
        self._x_nom = G.A @ self._x_nom + G.B @ u_nom
        self.k += 1
        return {"k": self.k - 1, "r": r, "u": u, "a": a, "u_tilde": ut, "e": e, "y": y,
                "v": v, "l": l, "w": w, "y_hat": y_hat, "d": d, "z": z, "y_nom": y_nom,
                "alarm": self._energy > self.threshold}


def build_loop(systems: LoopSystems, threshold: float = 0.5, horizon: int = 100,
               placement: str = "d1", feedback: str = "y_hat",
               initial_states: Optional[Mapping[str, np.ndarray]] = None) -> LoopEngine:
    """Create a zero-initialized loop engine (states overridable by name)."""
    engine = LoopEngine(systems, threshold, horizon, placement, feedback)
    if initial_states:
        engine.reset(initial_states)
    return engine


def _as_columns(seq, dim, n, what):
    if seq is None:
        return np.zeros((n, dim))
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape != (n, dim):
        raise ValueError(f"{what} must have shape ({n}, {dim}), got {arr.shape}")
    return arr


def run(engine: LoopEngine, reference=None, attack=None, noise=None,
        state_schedule: Optional[Mapping[int, Mapping[str, np.ndarray]]] = None) -> LoopTrace:
    """Step the engine over equal-length sequences (missing ones are zero).

    ``state_schedule`` maps a step index to subsystem states that are
    written just before that step executes.
    """
    lengths = {len(s) for s in (reference, attack, noise) if s is not None}
    if len(lengths) > 1:
        raise ValueError("reference, attack and noise sequences must have equal length")
    n = lengths.pop() if lengths else engine.horizon
    p, m = engine.systems.n_outputs, engine.systems.n_inputs
    R = _as_columns(reference, p, n, "reference")
    A = _as_columns(attack, m, n, "attack")
    E = _as_columns(noise, p, n, "noise")
    schedule = dict(state_schedule or {})
    rows = []
    for k in range(n):
        for name, x in schedule.get(k, {}).items():
            engine.set_state(name, x)
        rows.append(engine.step(R[k], A[k], E[k]))
    cols = {}
    for name in TRACE_COLUMNS + ("z", "y_nom"):
        arr = np.array([row[name] for row in rows])
        if arr.ndim == 1:
            arr = arr[:, None]
        arr.setflags(write=False)
        cols[name] = arr
    return LoopTrace(placement=engine.placement, **cols)


def detect(trace: LoopTrace, placement: str = "d1", threshold: float = 0.5) -> DetectorReport:
    """Residual-energy detector at the plant output (d1) or controller side (d2).

    The residual is the measured (d1) or reconstructed (d2) output minus
    the noise-free nominal closed-loop output for the same reference.
    """
    if placement not in PLACEMENTS:
        raise ValueError(f"placement must be one of {PLACEMENTS}")
    signal = trace.y if placement == "d1" else trace.y_hat
    return _report(signal - trace.y_nom, placement, threshold)


def performance_energy(trace: LoopTrace, horizon: Optional[int] = None) -> float:
    """``sum_{k=0}^{horizon} z_k^T z_k`` (whole trace when ``horizon`` is None)."""
    z = trace.z if horizon is None else trace.z[: horizon + 1]
    return float(np.sum(z * z))


def calibrate_threshold(systems: LoopSystems, horizon: int, noise_variance: float,
                        quantile: float = 0.999, runs: int = 200, placement: str = "d1",
                        seed: int = 0) -> float:
    """Empirical quantile of the attack-free residual energy with ``r = 0``."""
    if noise_variance <= 0:
        raise ValueError("threshold calibration needs a positive noise variance")
    p = systems.n_outputs
    energies = np.empty(runs)
    for i in range(runs):
        rng = make_rng(seed, 7, i)
        e = rng.normal(0.0, np.sqrt(noise_variance), size=(horizon, p))
        engine = build_loop(systems, np.inf, horizon, placement)
        trace = run(engine, noise=e)
        energies[i] = detect(trace, placement, np.inf).final_energy
    return float(np.quantile(energies, quantile))
