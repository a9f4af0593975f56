"""Leaf growth and leaf entropy along the three bundles.

For the linear map every leaf is a straight line stretched by exactly
|alpha|, so growth, entropy and the Birkhoff exponent all equal log|alpha|.
A small perturbation bends the leaves; growth and entropy still agree with
each other and with log|alpha|, while the Birkhoff exponent of volume may
drift below them.
"""

import math

import numpy as np

from anosovlab import families
from anosovlab.leaf_entropy import entropy_growth_gap
from anosovlab.splitting import lyapunov_exponent

x = np.array([0.1234, 0.5678, 0.3141])

for f in (families.linear(), families.single_mode(0.05)):
    print(f.name)
    for tag in ("uu", "wu", "s"):
        g = f if f.is_expanding(tag) else f.inverse()
        target = abs(f.spectrum.log_modulus(tag))
        n = max(3, math.ceil(math.log(200.0) / target))
        gap, ent, chi = entropy_growth_gap(g, tag, x, 0.05, n)
        lam = lyapunov_exponent(g, tag, n=300, ensemble=16)
        print(f"  {tag:2s} log|a| {target:.5f}  chi {chi:.5f}  h_W {ent.h:.5f}  "
              f"lambda {lam.value:.5f} +- {lam.std_error:.1e}")
