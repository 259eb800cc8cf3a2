# %% [markdown]
# # Two-phase training with a live convergence certificate
#
# The algorithm: run any base first-order method for tau steps, add
# independent Gaussian noise to every hidden-layer parameter, then train
# only the output head.  After the noise the feature matrix is full row
# rank with probability one, the head problem is convex, and exact head
# descent at step `1/L_H` obeys
#
#     loss(t) - loss*  <=  R^2 L_H / (2 (t - tau))
#
# where `R^2` is the squared distance from the post-noise head to the
# nearest head minimizer and `L_H` the smoothness constant of the frozen-
# feature problem.  Everything on the right is computable, so the bound
# can be checked step by step rather than trusted.

# %%
import numpy as np

from twophase import (
    BaseAlgoConfig,
    BoundConstants,
    NetworkSpec,
    TwoPhaseConfig,
    check_bounds,
    init_params,
    run_two_phase,
    solve_last_layer_optimum,
    synth_gen,
)
from twophase.losses import SQUARED

ds = synth_gen(n=16, m_x=8, m_y=2, c_min=0.05, kind="regression", seed=5)
spec = NetworkSpec(widths=(8, 16, 18), output_dim=2, sharpness=10.0,
                   bn_flags=(True, True))
base = BaseAlgoConfig(variant="gd", learning_rate=0.05, minibatch=16,
                      weight_decay=0.0, seed=0)
cfg = TwoPhaseConfig(tau=300, total_steps=1300, noise_scale=1e-3,
                     phase2_mode="last_layer_gd", seed=0)

params, log = run_two_phase(spec, init_params(spec, 0), ds, base, cfg, SQUARED)
print(f"loss: initial {log.loss_initial:.4f} -> at tau {log.loss_at_tau:.6f} "
      f"-> final {log.final_loss:.3e}")

# %% [markdown]
# The constants come from the recorded state at tau.  For squared loss the
# head optimum is an exact minimum-distance interpolating solve, so
# `loss*` is zero and `R^2` is exact:

# %%
opt = solve_last_layer_optimum(SQUARED, log.features_at_tau, ds.y, log.head_at_tau)
print(f"loss* = {opt.loss_star:.2e}, R^2 = {opt.r_squared:.4f}, L_H = {log.l_h:.2f}")

report = check_bounds(log, BoundConstants(
    mode="last_layer_gd", r_squared=opt.r_squared,
    loss_star=opt.loss_star, l_h=log.l_h))
print(f"violations over {len(report.entries)} steps: {report.violations}")

# %%
print(f"{'step':>6} {'loss - loss*':>14} {'ceiling':>12} {'slack':>12}")
for entry in report.entries[:: len(report.entries) // 8]:
    print(f"{entry.t:>6} {entry.measured:>14.3e} {entry.bound:>12.3e} "
          f"{entry.slack:>12.3e}")

# %% [markdown]
# The measured suboptimality sits far below the `1/(t - tau)` ceiling; the
# ceiling is a guarantee, not an estimate.  The same machinery runs in SGD
# mode with the square-summable schedule `a / sqrt(t - tau + 1)`, where the
# certificate speaks about the running argmin instead of the last iterate.
