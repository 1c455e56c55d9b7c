"""Watch an accuracy certificate bound the saddle-point gap.

A random bilinear game ``min_x max_y <y, A x - b>`` over two unit balls is
solved with a constant stepsize ``1/L``.  Every step updates running sums of
the execution protocol; from them we read off the resolution, which upper
bounds the exact saddle-point gap of the averaged point.

Run: ``python demos/certificates_on_a_bilinear_game.py``
"""
import numpy as np

from mirrorprox.certificates import Ball, ResolutionDomain, eps_sad_exact, resolution
from mirrorprox.comp import SaddleOperator, run
from mirrorprox.harness.generators import gen_bilinear

inst = gen_bilinear(20, seed=0)
L = inst.lipschitz
domain = ResolutionDomain(inst.layout, [Ball(1.0), Ball(1.0)])
marks = {2 ** k for k in range(12)}

print(f"{'t':>5} {'resolution':>12} {'exact gap':>12} {'L/t':>12}")


def report(state, step):
    t = state.iteration
    if t in marks:
        res = resolution(state.protocol, None, domain)
        gap = eps_sad_exact(state.protocol.averaged_point(), inst)
        print(f"{t:>5} {res:12.4e} {gap:12.4e} {L / t:12.4e}")


x1 = inst.layout.point([np.zeros(inst.n), np.zeros(inst.m)])
run(SaddleOperator(inst.field, []), inst.setup, x1, max_iters=2048, gamma=1.0 / L,
    checkpoints=[], callback=report)
print("The resolution never exceeds L/t, and the gap never exceeds the resolution.")
