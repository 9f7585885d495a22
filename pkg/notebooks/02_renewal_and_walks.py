# %% [markdown]
# # Renewal functions of the spine walk
#
# R^-(u) counts strict descending ladder heights down to depth u.  For the
# simple random walk it is floor(u) + 1, which makes it the exact oracle for
# the lattice dynamic program; the Gaussian spine walk uses a Nystrom solve.

# %%
import numpy as np

from brwlab import walk
from brwlab.harness.rng import RngStream
from brwlab.models import make_spec, skewed_lattice, spine_step_law, srw

u = np.arange(0, 11)
tab = walk.renewal_table(srw(), u)
print("SRW R^-:", tab.r_minus.round(9).tolist(), "theta0 =", tab.theta0)
mc = walk.renewal_table(srw(), u, "mc", 50_000, RngStream(2).generator())
print("max |MC - DP| / stderr:", float(np.max(np.abs(mc.r_minus - tab.r_minus) / np.maximum(mc.error_minus, 1e-12))))

# %% [markdown]
# ## The renewal identity on a grid
# Residuals of the ladder identity for x = 1..10, a = 1..5 on the skewed walk.

# %%
dist = skewed_lattice()
worst = 0.0
for x in range(1, 11):
    for a in range(1, 6):
        r = walk.check_renewal_identity(dist, x, a)
        worst = max(worst, abs(r.residual))
print(f"largest residual on the skewed walk: {worst:.2e}")

# %% [markdown]
# ## Harmonicity of R^- for the killed walk

# %%
gauss = spine_step_law(make_spec(p=1.0))
for u0 in (0.0, 1.0, 5.0):
    h = walk.check_harmonicity(gauss, u0, "mc", 200_000, RngStream(3, int(u0)).generator())
    print(f"u={u0}: residual {h.residual:+.4f} +- {h.stderr:.4f}")
