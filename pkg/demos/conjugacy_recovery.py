"""The conjugacy h with h o f = A o h, solved as a pointwise series.

For f = G A G^-1 the solution must be G^-1; for a map conjugate to A by a
translation it must be that translation.  The functional residual is
measured on a lattice that the series never saw.
"""

import numpy as np

from anosovlab import families
from anosovlab.conjugacy import functional_residual, solve_conjugacy
from anosovlab.torus_core import torus_displacement

x = np.random.default_rng(0).random((5000, 3))

sc = families.smooth_conjugate(0.05)
H = solve_conjugacy(sc, 16)
err = np.max(np.abs(torus_displacement(H(x), sc.perturbation.G_inverse(x))))
print(f"smooth conjugate: terms {H.terms}, max |h - G^-1| {err:.1e}")

c = np.array([0.1, 0.2, 0.3])
H = solve_conjugacy(families.translation_conjugate(c), 16)
print(f"translation: max |u + c| {np.max(np.abs(H.offset(x) + c)):.1e}")

for f in (families.single_mode(0.05), families.generic(7, 0.08)):
    H = solve_conjugacy(f, 16)
    print(f"{f.name}: sup |u| {H.u.sup():.4f}, residual on 32^3 {functional_residual(H, f, 32):.1e}")
