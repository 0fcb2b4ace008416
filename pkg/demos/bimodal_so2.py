"""Planar rotation with a two-hump prior.

The prior puts equal mass at +90 and -90 deg and the truth sits at +90 deg.
The exact posterior is available on a grid, so the particle histogram can
be compared with it bin by bin.  The Gaussian moment filter is shown for
contrast: it can only ever carry one hump.
"""

import numpy as np

from fpflie import bench

spec = bench.BimodalSpec(N=500, N_f=20)
res = bench.bimodal_experiment(spec)


top = max(res.particles.max(), res.oracle.max(), res.moment.max())


def bars(masses, width=18):
    return ["#" * int(round(m * width / top)) for m in masses]


centres = np.rad2deg(0.5 * (res.edges[1:] + res.edges[:-1]))
for k in (0, len(res.t) - 1):
    print(f"t = {res.t[k]:.2f} s   L1(particles, exact) = {res.l1()[k]:.3f}")
    for c, p, o, m in zip(centres, bars(res.particles[k]), bars(res.oracle[k]), bars(res.moment[k])):
        print(f"  {c:6.0f}  particles {p:<20} exact {o:<20} moment {m}")
    print()
