# %% [markdown]
# # The tail of the global minimum
#
# One weighted run of the shared-spine sampler gives P(M <= -x) for every x up
# to the sampled depth.  e^x P(M <= -x) should level off at a constant, the
# overshoot -(M + x) given M <= -x should be Exp(1) and independent of the
# derivative mass seen from the argmin.

# %%
import math

import numpy as np

from brwlab import tail_lab as tl
from brwlab.harness.io import write_plot_data
from brwlab.models import make_spec

spec = make_spec(p=1.0)
run = tl.min_law_run(spec, 50_000, seed=11)
print("frozen-subtree constant:", round(run.frozen_constant, 4))
print("total mass:", run.total_mass().value)

# %%
curve = tl.estimate_cM(spec, range(1, 13), run=run)
for row in curve.rows():
    print(f"x={row['x']:4.0f}  e^x P = {row['transformed']:.4f} +- {row['transformed_stderr']:.4f}")
print(f"plateau {curve.level.value:.4f}, relative drift {curve.plateau.relative_drift:.3f}")
write_plot_data("min_tail.dat", {"x": curve.x_grid, "exP": curve.transformed, "se": curve.transformed_stderr},
                ["e^x P(M <= -x), p = 1"])

# %%
cs, rep = tl.conditional_min_law(spec, 8.0, run=run)
print(f"overshoot KS p = {rep['ks'].p_value:.3f}, effective n = {rep['effective_n']:.0f}, "
      f"corr with ln(1 + frak_D) = {rep['corr']:+.4f}")

# %% [markdown]
# ## Factorization of the constants
# c_D should equal c_M times the mean derivative mass at the argmin.

# %%
cd = tl.estimate_cDinf(spec, run=run)
fac = tl.factorization_check(curve.level, cd.level, rep["frak_D_mean"])
print(f"c_M = {curve.level.value:.4f}, E frak_D = {rep['frak_D_mean'].value:.4f}, "
      f"product = {fac.product:.4f}, c_D = {cd.level.value:.4f}, passes: {fac.passes}")
