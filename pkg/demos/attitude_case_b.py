"""Large initial error: a half turn away from the prior mean.

Runs a handful of Monte Carlo trials of the attitude scenario with a 60 deg
prior and prints the mean angle error of every filter at a few times.  The
particle filters typically pull the error down within the first tenth of a
second, while the moment filters take longer to turn around.
"""

import numpy as np

from fpflie import bench

spec = bench.ExperimentSpec(scenario=bench.attitude_scenario("b", T=1.0, seed=7), M=5, N=100)
table = bench.run_experiment(spec)

marks = [0.0, 0.05, 0.1, 0.2, 0.5, 1.0]
idx = [int(round(t / spec.scenario.dt)) for t in marks]
print("t (s)    " + "".join(f"{f:>13}" for f in table.filters))
for t, k in zip(marks, idx):
    row = "".join(f"{np.rad2deg(table.mean_curve(f)[k]):12.1f}d" for f in table.filters)
    print(f"{t:5.2f}    {row}")

print()
for f in table.filters:
    print(f"{f:12} median time to halve the error: {table.median_halving_time(f):.3f} s")
