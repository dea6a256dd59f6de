"""The three model variants, their per-level mixing schedule and parameter budgets.

Run: python3 demos/03_models_and_parameters.py
"""

# %% Default schedule at width 64, input 256
from mmunet import models
from mmunet.models import ModelSpec

spec = ModelSpec("mm_unet")
for lvl, (groups, r) in enumerate(zip(spec.level_groups(), spec.resolutions()), 1):
    desc = ", ".join(f"c={g.channels} n={g.block_count} s={g.patch_size}" for g in groups)
    print(f"level {lvl} ({r}x{r}): {desc}")

# %% Parameter counts come from a closed-form enumeration; nothing is allocated
for variant in models.VARIANTS:
    print(f"{variant:15s}", models.count_params(ModelSpec(variant)))

unet = models.count_params(ModelSpec("unet")).total
mm = models.count_params(ModelSpec("mm_unet"))
print(f"mixing overhead {mm.mmlp_overhead} = {100 * mm.mmlp_overhead / unet:.2f}% of the UNet")
print("closed form matches:", mm.mmlp_overhead == models.mmlp_closed_form(ModelSpec("mm_unet")))

# %% Desk-scale model used by the training demo
desk = ModelSpec("mm_unet", base_width=16, input_size=64)
print("desk model", models.count_params(desk))
for name, n in models.count_params(desk).breakdown:
    print(f"  {name:6s} {n}")
