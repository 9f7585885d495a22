# %% [markdown]
# # The offspring law and its spine
#
# The Gaussian dyadic family: each particle branches into two with
# probability p, children displaced by N(mu, s2) with mu = s2 = 2 ln(2p).
# That choice puts the walk in the boundary case: E sum e^{-V} = 1 and
# E sum V e^{-V} = 0.  Under the size-biased measure the spine moves as a
# centred N(0, s2) walk.

# %%
import math

import numpy as np
from scipy import stats

from brwlab.harness.rng import RngStream
from brwlab.models import make_spec, spine_step_law, validate_boundary
from brwlab import spine_sim

for p in (0.6, 0.8, 1.0):
    spec = make_spec(p=p)
    rep = validate_boundary(spec)
    print(f"p={p}: mu={spec.mu:.4f} mass residual={rep.residual_mass:.1e} "
          f"tilt residual={rep.residual_tilt:.1e} spine variance={rep.sigma2_spine:.4f}")

# %% [markdown]
# ## Many-to-one
# The tree average of sum_{|z|=n} g(V(z)) equals the walk average of
# e^{S_n} g(S_n).  The table compares both sides for three test functions.

# %%
spec = make_spec(p=1.0)
rng = RngStream(1).generator()
table = spine_sim.many_to_one_table(spec, 4, ["one", "le0", "sexp"], 100_000, rng)
print(f"{'g':>5} {'n':>2} {'tree':>10} {'walk':>10} {'z':>6}")
for (tag, n), (lhs, rhs) in sorted(table.items()):
    z = (lhs.value - rhs.value) / math.hypot(lhs.stderr, rhs.stderr)
    print(f"{tag:>5} {n:>2} {lhs.value:10.4f} {rhs.value:10.4f} {z:6.2f}")

# %% [markdown]
# ## The spine marginal
# V(w_n) should be N(0, n s2).

# %%
law = spine_step_law(spec)
for n in (1, 5, 20):
    pos, _, _ = spine_sim.spine_walks(spec, 50_000, n, rng)
    ks = stats.kstest(pos[:, -1], "norm", args=(0.0, math.sqrt(n * law.variance)))
    print(f"n={n:2d}: KS p-value {ks.pvalue:.3f}")
