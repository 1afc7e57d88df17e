"""Does the predicted sigma rank errors?  A sparsification check on synthetic fields.

The synthetic uncertainty model makes sigma grow with the actual smear
noise, so dropping the most uncertain pixels should lower the remaining
mean EPE-S.  The curve is printed for one field, then the monotone share
over a batch of seeds.

    python3 demos/uncertainty_sparsification.py [n_seeds]
"""
import sys

import numpy as np

from smearfm import SmearField, epe_s_summary, field_sparsification, generate_scene

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 20


def fields(seed):
    sc = generate_scene(dense=True, width=64, height=48, noise_sigma_px=0.5, seed=seed)
    pred = sc.to_smear_field()
    gt = SmearField(sc.clean_half_smears.reshape(pred.vectors.shape), np.ones(pred.sigma.shape))
    return pred, gt


pred, gt = fields(0)
print("fraction removed   normalized mean EPE-S")
for f, v in field_sparsification(pred, gt):
    print(f"      {f:.1f}              {v:.3f}  " + "#" * int(round(40 * v)))
print(f"mean EPE-S over the most certain half: {epe_s_summary(pred, gt):.3f} px")

monotone = sum(np.all(np.diff(field_sparsification(*fields(s))[:, 1]) <= 0) for s in range(n_seeds))
print(f"non-increasing curves: {monotone}/{n_seeds}")
