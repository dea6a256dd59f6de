"""Train the desk-scale MM-UNet on phantoms and compare it with the threshold baseline.

Run: python3 demos/05_desk_training.py [EPOCHS]

Twenty epochs (the default) take roughly 8 minutes on one CPU core.
"""

# %% Data: 500 phantoms, 400 for training and 100 for validation
import sys
import time

import numpy as np

from mmunet import data_io, models, training

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
samples = data_io.gen_phantom(data_io.PhantomSpec(count=500, size=64, seed=1))
train_set, val_set, _ = data_io.split(samples, (4, 1, 0), seed=1)
images, masks = data_io.stack(val_set)
baseline = training.segmentation_metrics(
    np.stack([data_io.threshold_segment(im) for im in images]), masks, 4
)
print("threshold baseline on val:", baseline)

# %% Model and schedule: default base learning rate, stair drop near the end, gradient-norm clip
model = models.build(models.ModelSpec("mm_unet", base_width=16, input_size=64), seed=1)
cfg = training.TrainConfig(
    epochs=epochs, batch_size=16, base_lr=0.015, input_size=64, seed=1,
    lr_drop_start=max(1, epochs - 4), lr_drop_every=4, grad_clip=2.0,
)

start = time.perf_counter()
result = training.train(model, train_set, val_set, cfg, on_epoch=print)
print(f"trained in {(time.perf_counter() - start) / 60:.1f} min")

# %% Best-by-validation weights
model.load_state_dict(result.best_state)
final = training.evaluate(model, val_set)
print(f"best epoch {result.best_epoch}:", final)
print("beats the threshold baseline:", final.miou > baseline.miou)
