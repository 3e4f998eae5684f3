"""
Learn, then attack
==================

The adversary records (u, w) from the channel, fits a model, and replays a
zero-dynamics attack built from that model.  With masking the model is the
cipher plant, so the attack is not zero-dynamics for the real plant.
"""

from dynmask import LoopSystems, TransferFunction, pole_placement_controller
from dynmask.adversary import collect_disclosure, identify, run_attack_experiment, structure_for
from dynmask.design import shift_zeros

G = TransferFunction([1.0, -1.1], [1.0, -0.7, 0.1])
C = pole_placement_controller(G)
masked = LoopSystems(G, shift_zeros(G, 0.2), C)
unmasked = LoopSystems(G, G, C)

# identification from the disclosed signals
data, _ = collect_disclosure(masked, 2000, seed=1)
fit = identify(data, structure_for(G))
print(fit.to_text())

for label, systems in (("masked", masked), ("unmasked", unmasked)):
    exp = run_attack_experiment(systems, 2000, 100, threshold=0.5, placement="d1", seed=1)
    rep = exp.report
    print(f"{label:9s} attacked zero {exp.plan.beta.real:.4f}  alarm {rep.alarm}  "
          f"first alarm {rep.first_alarm_step}  detector energy {rep.final_energy:.2e}  "
          f"extra plant energy {exp.energy_increase[-1]:.3e}")

# a stable cipher zero gives a bounded attack
stable = LoopSystems(G, TransferFunction([1.0, -0.8], G.den), C)
exp = run_attack_experiment(stable, 2000, 300, seed=1)
inc = exp.energy_increase
print(f"stable cipher: extra energy at k=100 {inc[100]:.4e}, at k=299 {inc[-1]:.4e}")
