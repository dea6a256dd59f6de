"""Synthetic lens phantoms, the threshold baseline, and the on-disk formats.

Run: python3 demos/04_phantoms_and_files.py [OUT_DIR]
"""

# %% Render a few phantoms
import sys
import tempfile
from pathlib import Path

import numpy as np

from mmunet import data_io, models, training

spec = data_io.PhantomSpec(count=20, size=64, seed=1)
samples = data_io.gen_phantom(spec)
s = samples[0]
print("image", s.image.shape, s.image.dtype, "mask classes", np.unique(s.mask))
for c, name in enumerate(data_io.CLASS_NAMES):
    print(f"  {name:10s} {np.mean(s.mask == c) * 100:5.1f}% of pixels")

# %% A context-free nearest-intensity classifier is the floor a trained model must beat
images, masks = data_io.stack(samples)
pred = np.stack([data_io.threshold_segment(im) for im in images])
print("threshold baseline:", training.segmentation_metrics(pred, masks, 4))

# %% Dataset folders hold PPM images, PGM masks and a manifest
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
data_io.write_dataset(out / "phantoms", samples, spec)
print("wrote", out / "phantoms", sorted(p.name for p in (out / "phantoms").iterdir())[:3], "...")
back = data_io.read_dataset(out / "phantoms")
print("masks survive exactly:", all(np.array_equal(a.mask, b.mask) for a, b in zip(samples, back)))

# %% Checkpoints are a small binary format with named, shaped tensors
model = models.build(models.ModelSpec("mm_unet", base_width=8, input_size=64))
data_io.save_checkpoint(model, out / "model.ckpt")
state = data_io.load_checkpoint(out / "model.ckpt", model)
print("checkpoint tensors", len(state), "bytes", (out / "model.ckpt").stat().st_size)
