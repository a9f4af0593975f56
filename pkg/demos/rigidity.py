"""Exponent gap against leafwise regularity of the conjugacy.

On the smooth conjugate the volume exponent along each bundle equals the
growth rate and h is smooth along leaves.  On a generic perturbation the
weak unstable exponent falls strictly below the growth rate, and at many
base points the leafwise difference quotients of h keep drifting between
the two finest scales instead of settling on a derivative.

Takes a few minutes on one core.
"""

from anosovlab import families
from anosovlab.conjugacy import solve_conjugacy, tag_diagnostics

kw = dict(orbit_length=1000, ensemble=256, leaves=8, entropy=False, base_points=32)
for f in (families.smooth_conjugate(0.05), families.generic(7, 0.08)):
    H = solve_conjugacy(f, 16)
    d = tag_diagnostics(f, "wu", H, **kw)
    reg = d.regularity
    print(f"{f.name} wu: lambda {d.lam:.5f}  chi {d.chi:.5f}  gap {d.gap / d.sigma:+.1f} sd  "
          f"probe exponent {reg.exponent:.3f}  unsettled {reg.unstable_fraction:.0%}  {reg.verdict}")
