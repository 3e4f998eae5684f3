"""Acceptance criteria, one test each.

Every test records a pass/fail line (printed in the terminal summary) and
then asserts, so a failing criterion is reported and also fails the run.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from dynmask import (
    LoopSystems,
    StateSpace,
    TransferFunction,
    build_loop,
    frequency_response,
    invariant_zeros,
    pole_placement_controller,
    run,
    simulate,
    tf_to_ss,
)
from dynmask.adversary import (
    collect_disclosure,
    identify,
    run_attack_experiment,
    structure_for,
    synthesize_zda,
)
from dynmask.lti import rosenbrock
from dynmask.privacy import empirical_bias_variance, mse_lower_bound
from dynmask.scenario import config_from_dict, load_config, run_scenario, sweep

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
G = TransferFunction([1.0, -1.1], [1.0, -0.7, 0.1])


def masked_systems(cipher_zero=1.3, noise_filter=None):
    S = TransferFunction([1.0, -cipher_zero], G.den)
    return LoopSystems(G, S, pole_placement_controller(G), noise_filter)


def test_identified_zero_is_cipher_zero(acceptance):
    t0 = time.perf_counter()
    systems = masked_systems()
    data, _ = collect_disclosure(systems, 2000, seed=1)
    zero = identify(data, structure_for(G)).model.zeros()
    zero = complex(zero[np.argmax(np.abs(zero))])
    elapsed = time.perf_counter() - t0
    ok = abs(zero - 1.3) <= 1e-3 and abs(zero - 1.1) >= 0.18 and elapsed < 10
    acceptance(1, "identified zero", ok,
               f"zero={zero.real:.12f}, |z-1.3|={abs(zero - 1.3):.2e}, |z-1.1|={abs(zero - 1.1):.4f}, "
               f"{elapsed:.2f}s")
    assert ok


def test_masked_attack_detected(acceptance):
    t0 = time.perf_counter()
    exp = run_attack_experiment(masked_systems(), 2000, 100, threshold=0.5, placement="d1",
                                amplitude=1e-3, seed=1)
    energy = exp.report.energy
    k = np.arange(30, 61)
    normalized = energy[k] / abs(exp.plan.beta) ** (2 * k)
    spread = normalized.max() / normalized.min()
    elapsed = time.perf_counter() - t0
    first = exp.report.first_alarm_step
    ok = (exp.report.alarm and first < 80 and spread <= 10 and abs(exp.plan.beta - 1.3) < 1e-3
          and elapsed < 5)
    acceptance(2, "detection under mask", ok,
               f"beta={exp.plan.beta.real:.6f}, first alarm k={first}, envelope spread={spread:.3f}, "
               f"{elapsed:.2f}s")
    assert ok


def test_unmasked_attack_is_stealthy(acceptance):
    t0 = time.perf_counter()
    systems = LoopSystems(G, G, pole_placement_controller(G))
    plan = synthesize_zda(G, amplitude=1e-3)
    exp = run_attack_experiment(systems, 0, 100, plan, threshold=0.5, placement="d1")
    cum = np.cumsum(np.sum(exp.attack_trace.z ** 2, axis=1))
    detector = exp.report.final_energy
    elapsed = time.perf_counter() - t0
    ok = detector <= 1e-10 and cum[60] >= 2 * cum[50] and exp.init_target == "plant" and elapsed < 5
    acceptance(3, "stealth without mask", ok,
               f"D1 energy={detector:.2e}, E60/E50={cum[60] / cum[50]:.2f}, {elapsed:.2f}s")
    assert ok


def test_stable_cipher_bounds_damage(acceptance):
    t0 = time.perf_counter()
    exp = run_attack_experiment(masked_systems(0.8), 2000, 300, threshold=0.5, seed=1)
    increments = np.abs(np.diff(exp.energy_increase))
    tail = increments[200:].max()
    elapsed = time.perf_counter() - t0
    ok = tail < 1e-10 and abs(exp.plan.beta - 0.8) < 1e-3 and elapsed < 5
    acceptance(4, "bounded damage with stable cipher zero", ok,
               f"beta={exp.plan.beta.real:.6f}, max increment past k=200: {tail:.2e}, "
               f"total increase={exp.energy_increase[-1]:.3e}, {elapsed:.2f}s")
    assert ok


def test_mse_lower_bound(acceptance):
    t0 = time.perf_counter()
    systems = masked_systems()
    curve = empirical_bias_variance(systems, 4000, 50, noise_variance=0.01, seed=11)
    lb = mse_lower_bound(curve, systems.plant, systems.cipher)
    gap = np.abs(frequency_response(systems.cipher, curve.omega).response
                 - frequency_response(systems.plant, curve.omega).response) ** 2
    bands = np.array_split(np.arange(curve.omega.size), 8)
    rel = [abs(lb.empirical_mse[b].mean() / (gap[b] + curve.variance[b]).mean() - 1) for b in bands]
    elapsed = time.perf_counter() - t0
    ok = curve.omega.size == 512 and lb.holds and max(rel) <= 0.25 and elapsed < 180
    acceptance(5, "finite-sample MSE bound", ok,
               f"bound holds at {int(lb.satisfied.sum())}/512, worst band deviation={max(rel):.2%}, "
               f"failures={curve.failures}, {elapsed:.1f}s")
    assert ok


def _random_stable_poly(rng, order):
    roots = []
    while len(roots) < order:
        if order - len(roots) >= 2 and rng.random() < 0.5:
            r, th = rng.uniform(0.1, 0.9), rng.uniform(0.1, np.pi - 0.1)
            roots += [r * np.exp(1j * th), r * np.exp(-1j * th)]
        else:
            roots.append(rng.uniform(-0.9, 0.9))
    return np.real(np.poly(roots))


def test_channel_and_reconstruction_identities(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = np.zeros(3)
    configs = 0
    while configs < 100:
        n = int(rng.integers(1, 4))
        den = _random_stable_poly(rng, n)
        G_ = TransferFunction(rng.normal(size=n), den)
        S_ = TransferFunction(rng.normal(size=n), den)
        H_ = TransferFunction(_random_stable_poly(rng, 1), _random_stable_poly(rng, 1))
        try:
            systems = LoopSystems(G_, S_, pole_placement_controller(G_), H_)
        except ValueError:
            continue  # near-common factor in the random plant
        configs += 1
        N = 200
        r, a, e = rng.normal(size=N), rng.normal(size=N), 0.1 * rng.normal(size=N)
        trace = run(build_loop(systems), r, a, e)
        sp, _ = simulate(systems.cipher, trace.u_tilde[:, 0])
        hp, _ = simulate(systems.noise_filter, e)
        worst[0] = max(worst[0], np.max(np.abs(trace.w[:, 0] - sp - hp)))
        benign = run(build_loop(systems), r, None, e)
        worst[1] = max(worst[1], np.max(np.abs(benign.y_hat - benign.y)))
        gs, _ = simulate(systems.cipher, a)
        gg, _ = simulate(systems.plant, a)
        worst[2] = max(worst[2], np.max(np.abs((trace.y_hat - trace.y)[:, 0] - (gs - gg))))
    elapsed = time.perf_counter() - t0
    ok = worst[0] <= 1e-10 and worst[1] <= 1e-10 and worst[2] <= 1e-9 and elapsed < 30
    acceptance(6, "channel and reconstruction identities", ok,
               f"100 configs: channel {worst[0]:.1e}, reconstruction {worst[1]:.1e}, "
               f"attack gap {worst[2]:.1e}, {elapsed:.2f}s")
    assert ok


def _separated_roots(rng, count, min_gap=0.05):
    while True:
        roots = []
        while len(roots) < count:
            if count - len(roots) >= 2 and rng.random() < 0.4:
                z = rng.uniform(0.2, 1.8) * np.exp(1j * rng.uniform(0.2, np.pi - 0.2))
                roots += [z, np.conj(z)]
            else:
                roots.append(rng.uniform(-1.8, 1.8))
        roots = np.array(roots, dtype=complex)
        d = np.abs(roots[:, None] - roots[None, :]) + np.eye(count) * 10
        if count < 2 or d.min() >= min_gap:
            return roots


def test_zero_solver_matches_numerator_roots(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    worst_err = worst_res = 0.0
    checked = 0
    while checked < 200:
        n = int(rng.integers(2, 7))
        m = int(rng.integers(0, n))
        zeros = _separated_roots(rng, m)
        poles = _separated_roots(rng, n)
        if m and np.min(np.abs(zeros[:, None] - poles[None, :])) < 0.05:
            continue
        gain = rng.uniform(0.5, 2.0)
        tf = TransferFunction(gain * np.real(np.poly(zeros)) if m else [gain],
                              np.real(np.poly(poles)))
        ss = tf_to_ss(tf)
        # a random well-conditioned change of coordinates
        T = np.linalg.qr(rng.normal(size=(n, n)))[0] @ np.diag(rng.uniform(0.5, 2.0, n))
        Ti = np.linalg.inv(T)
        ss = StateSpace(Ti @ ss.A @ T, Ti @ ss.B, ss.C @ T, ss.D)
        found = invariant_zeros(ss)
        checked += 1
        if len(found) != m:
            worst_err = np.inf
            continue
        if m == 0:
            continue
        got = np.array([zd.zero for zd in found])
        row, col = linear_sum_assignment(np.abs(got[:, None] - zeros[None, :]))
        worst_err = max(worst_err, np.max(np.abs(got[row] - zeros[col])))
        bound = 1e-8 * (1 + np.linalg.norm(ss.A))
        for zd in found:
            res = np.linalg.norm(rosenbrock(ss, zd.zero) @ np.concatenate([zd.x0, zd.g]))
            worst_res = max(worst_res, res / bound)
    elapsed = time.perf_counter() - t0
    ok = worst_err <= 1e-8 and worst_res <= 1.0 and elapsed < 30
    acceptance(7, "zero solver vs numerator roots", ok,
               f"200 systems: max zero error {worst_err:.1e}, max residual/bound {worst_res:.1e}, "
               f"{elapsed:.2f}s")
    assert ok


def test_bias_persists_in_record_length(acceptance, tmp_path):
    t0 = time.perf_counter()
    cfg = config_from_dict({
        "scenario": {"seed": 1, "name": "length-sweep"},
        "systems": {"plant_num": [1.0, -1.1], "plant_den": [1.0, -0.7, 0.1], "zero_shift": 0.2,
                    "noise_variance": 0.01},
    })
    reports = sweep(cfg, "n_identify", [500, 1000, 2000, 4000], replicates=20, out_dir=tmp_path)
    by_n = {}
    for r in reports:
        by_n.setdefault(r.config.n_identify, []).append(r.identified_zero)
    ns = sorted(by_n)
    to_cipher = [float(np.median(np.abs(np.array(by_n[n]) - 1.3))) for n in ns]
    to_plant = [float(np.median(np.abs(np.array(by_n[n]) - 1.1))) for n in ns]
    elapsed = time.perf_counter() - t0
    ok = (all(len(by_n[n]) == 20 for n in ns) and all(np.diff(to_cipher) < 0)
          and min(to_plant) >= 0.15 and elapsed < 300)
    acceptance(8, "bias persists as N grows", ok,
               "median |z-1.3| = " + ", ".join(f"{v:.2e}" for v in to_cipher)
               + "; median |z-1.1| = " + ", ".join(f"{v:.3f}" for v in to_plant)
               + f"; {elapsed:.1f}s")
    assert ok


def test_byte_identical_reruns(acceptance, tmp_path):
    cfg = load_config(CONFIGS / "noisy.toml").replace(calibrate_runs=20)
    a = run_scenario(cfg, tmp_path / "a")
    b = run_scenario(cfg, tmp_path / "b")
    csvs = [(Path(fa), Path(fb)) for fa, fb in zip(a.files, b.files) if fa.endswith(".csv")]
    sweep(cfg, "amplitude", [1e-3, 1e-2], out_dir=tmp_path / "sa")
    sweep(cfg, "amplitude", [1e-3, 1e-2], out_dir=tmp_path / "sb")
    csvs.append((tmp_path / "sa" / "sweep_amplitude.csv", tmp_path / "sb" / "sweep_amplitude.csv"))
    same = [fa.read_bytes() == fb.read_bytes() for fa, fb in csvs]
    ok = all(same) and len(csvs) == 4
    acceptance(9, "byte-identical reruns", ok, f"{sum(same)}/{len(csvs)} CSV files identical")
    assert ok
