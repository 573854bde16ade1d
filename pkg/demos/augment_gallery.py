"""
The augmentation chain, one stage at a time
===========================================

Renders a synthetic text line, applies each production stage on its own
with probability 1, then the full chain with its default probability of
0.4 per stage. Every image is stacked into one PNG.

    python demos/augment_gallery.py [out.png]
"""
import sys
import warnings

import numpy as np

from crnnkit import augment, imaging, synth
from crnnkit.augment import AugmentConfig

out_path = sys.argv[1] if len(sys.argv) > 1 else "augment_gallery.png"
img, label = synth.make_examples(1, vocab=40, seed=4, min_len=6, max_len=6)[0]
print("label:", label, "source size:", img.shape)

base = AugmentConfig(channels=3)
rows = [augment.prepare(img, base)]
for stage in ("height_crop", "cutout", "tia", "gauss_noise", "motion_blur"):
    only = AugmentConfig.disabled(channels=3, prob=1.0, **{stage: True})
    rows.append(augment.apply_pipeline(img, only, seed=0, index=1))
    print(f"{stage:12s} changed {np.mean(rows[-1] != rows[0]):.1%} of the pixels")

with warnings.catch_warnings():
    warnings.simplefilter("ignore", augment.AugmentWarning)
    for i in range(4):
        rows.append(augment.apply_pipeline(img, base, seed=0, index=100 + i))

# same (seed, index) gives the same bytes, always
again = augment.apply_pipeline(img, base, seed=0, index=100)
print("deterministic:", np.array_equal(again, rows[6]))

sheet = np.concatenate([np.pad(r, ((2, 2), (0, 0), (0, 0)), constant_values=255) for r in rows])
imaging.save_image(out_path, sheet)
print("wrote", out_path, sheet.shape)
