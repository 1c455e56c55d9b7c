"""Upper and lower bounds on a matrix completion problem with a known optimum.

The instance ``0.5||P y - b||^2 + lam||y||_1 + mu||y||_nuc`` is built so that
a planted matrix is optimal, so we can watch both certified bounds close in
on the true value.  The penalty coefficient is adapted on the fly; every
increase restarts the protocol from the current point.

Run: ``python demos/matrix_completion_bounds.py``
"""
from mirrorprox.harness.drivers import SolveConfig, solve

out = solve(SolveConfig(family="mc_known_opt", n=48, seed=3, max_iters=1024))
opt = out.instance.opt
print(f"planted optimum {opt:.8f}")
print(f"{'t':>5} {'upper':>14} {'lower':>14} {'rho':>8} {'restarts':>8}")
for row in out.rows:
    print(f"{row.t:>5} {row.upper:14.8f} {row.lower:14.8f} {row.rho_or_alpha:8.3g} {row.restarts:>8}")
print(f"relative error of the best point: {(out.upper - opt) / opt:.2e}")
