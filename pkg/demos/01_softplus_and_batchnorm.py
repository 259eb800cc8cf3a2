# %% [markdown]
# # Sharp softplus and batch normalization
#
# The network's nonlinearity is softplus with a sharpness knob:
# `ln(1 + exp(s z)) / s`.  As the sharpness grows the function squeezes
# onto ReLU from above, but it stays smooth, which is what lets random
# hidden parameters produce full-rank feature matrices.  This script looks
# at the approximation gap and at the numerical behavior of both layers.

# %%
import numpy as np

from twophase import batchnorm_forward, softplus

z = np.linspace(-6.0, 6.0, 13)
for sharp in (1.0, 10.0, 100.0):
    gap = softplus(z, sharp) - np.maximum(z, 0.0)
    print(f"sharpness {sharp:6.1f}: max gap {gap.max():.6f} "
          f"(ceiling ln2/s = {np.log(2.0) / sharp:.6f})")

# %% [markdown]
# The gap peaks at the origin at exactly `ln(2)/s` and vanishes in both
# tails.  A naive `log(1 + exp(s z))` would overflow once `s z > 700`; the
# implementation splits off the linear part, so huge arguments are fine:

# %%
print("softplus(1e6, 100) =", softplus(1e6, 100.0))
print("softplus(-6, 100) =", softplus(-6.0, 100.0), "(tiny but positive)")

# %% [markdown]
# Batch normalization operates per unit over the batch with the population
# variance.  Note the map depends on the whole batch: changing one entry
# moves every output.  That coupling is why feature matrices of BN networks
# can depend on all samples at once.

# %%
batch = np.array([1.0, 2.0, 3.0, 4.0])
out = batchnorm_forward(batch, gamma=1.0, beta=0.0, eps=1e-5)
print("normalized batch:", np.round(out, 4))

bumped = batch.copy()
bumped[0] += 1.0
print("after bumping one entry:", np.round(batchnorm_forward(bumped, 1.0, 0.0, 1e-5), 4))

# %% [markdown]
# With a scale and shift the output batch has mean `beta`, and in the
# small-epsilon limit variance `gamma^2`:

# %%
rng = np.random.default_rng(0)
big = rng.standard_normal(512) * 7.0 + 3.0
out = batchnorm_forward(big, gamma=2.5, beta=-1.0, eps=1e-12)
print(f"mean {out.mean():+.6f} (beta = -1), variance {out.var():.6f} (gamma^2 = 6.25)")
