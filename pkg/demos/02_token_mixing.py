"""Global token mixing, its local (blocked) variant, and the multi-scale block.

Run: python3 demos/02_token_mixing.py
"""

# %% Token mixing: an MLP along the token axis, shared by every feature lane
import numpy as np

from mmunet import mixer, mmlp
from mmunet import tensor as T
from mmunet.mmlp import GroupSpec

rng = np.random.default_rng(1)
G = 8  # 8 x 8 token grid
params = mixer.TokenMixParams(tokens=G * G, lanes=6, rng=rng, dtype=np.float64)
tokens = T.Tensor(rng.standard_normal((1, G * G, 6)))
out = mixer.token_mix(tokens, params)
print("token_mix", tokens.shape, "->", out.shape)

# %% With a single block, local mixing is exactly global mixing
same = np.array_equal(mmlp.ltm(tokens, 1, params).data, out.data)
print("ltm(n=1) == token_mix bitwise:", same)

# %% With n = 2 the 8x8 grid is cut into four 4x4 blocks; a poke in one block stays there
local = mixer.TokenMixParams(tokens=16, lanes=6, rng=rng, dtype=np.float64)
base = mmlp.ltm(tokens, 2, local).data.reshape(G, G, 6)
poked = tokens.data.copy()
poked[0, 0] += 100.0  # token (0, 0) lives in the top-left block
moved = mmlp.ltm(T.Tensor(poked), 2, local).data.reshape(G, G, 6)
changed = np.abs(moved - base).max(axis=-1) > 0
print("tokens changed by the poke:")
print(changed.astype(int))

# %% The multi-scale block splits channels into groups, each mixing at its own block count
groups = [GroupSpec(8, 4, 4), GroupSpec(4, 4, 2), GroupSpec(4, 4, 1)]
block = mmlp.MMLPBlock(groups, resolution=32, zero_out=False)
fmap = T.Tensor(rng.standard_normal((2, 16, 32, 32)).astype(np.float32))
print("MMLP block", fmap.shape, "->", block(fmap).shape, "params", block.num_params())
for g in groups:
    print(f"  group c={g.channels} s={g.patch_size} n={g.block_count}: "
          f"{g.tokens_per_block(32)} tokens/block, {mmlp.ltm_param_count(g, 32)} weights")
