"""Desk-scale verification of the conflict bound and the descent property.

The bound oracle generates always-conflicting gradient cones, runs the
full projection sweep, and compares each position's residual conflict
against the closed-form bound (monotone decreasing in the position, zero
for the last target). The descent oracle iterates the two-client adjusted
update at a compliant step and tracks the objective, with an oversized
step as the negative control.
"""

from fairfedsim.numeric import make_rng
from fairfedsim.oracles import (
    compliant_eta,
    conflicting_quadratic_problem,
    generate_theorem2_instance,
    theorem2_campaign,
    theorem2_check,
    theorem3_descent_check,
)

rng = make_rng(2024)
inst = generate_theorem2_instance(K=5, dim=10, rng=rng)
print(f"instance: K={inst.K}, goal={inst.goal:.3f}, eps1={inst.eps1:.3f}, eps2={inst.eps2:.3f}")
report = theorem2_check(inst)
print(f"hypothesis satisfied: {report.hypothesis_satisfied}, adjustments: {report.n_adjustments}")
for e in report.entries:
    print(f"  position {e.position}: conflict {e.conflict:.4e} <= bound {e.bound:.4e}  ok={e.ok}")

summary = theorem2_campaign(100, seed=3)
print("\n100-instance campaign:", summary.to_json())

print("\ndescent check on three quadratic instances:")
for i in range(3):
    problem = conflicting_quadratic_problem(6, make_rng(9, i))
    eta = compliant_eta(problem)
    trace = theorem3_descent_check(problem, eta)
    control = theorem3_descent_check(problem, 10.0 / problem.smoothness)
    print(f"  L={problem.smoothness:.2f} goal={problem.goal:.2f} eta={eta:.4f}: "
          f"monotone={trace.monotone} (conflict rounds {len(trace.coefficients)}), "
          f"J {trace.objectives[0]:.3f} -> {trace.objectives[-1]:.6f}; "
          f"control increases: {control.n_increases}")
