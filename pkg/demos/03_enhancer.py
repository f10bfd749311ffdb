"""Fit the sparse->dense spectrogram translator on far vs near captures.

Run: python demos/03_enhancer.py
"""
import numpy as np

from mmgesture.enhance import EnhanceTrainConfig, enhance_images, train_enhancer
from mmgesture.pipeline import Pipeline, enhancer_domains, featurize
from mmgesture.scene import DatasetSpec, generate_instances
from mmgesture.spectro import occupancy

pairs = list(generate_instances(DatasetSpec(repetitions=30, seed=0)))
sparse, dense, sparse_test = enhancer_domains(featurize(pairs, Pipeline()))
print(f"unpaired pools: {len(sparse)} sparse, {len(dense)} dense, {len(sparse_test)} held-out sparse")

enh = train_enhancer(sparse, dense, EnhanceTrainConfig(iterations=200, seed=0))
h = enh.history
print(f"probe cycle loss {h['probe_cyc'][0]:.4f} -> {h['probe_cyc'][-1]:.4f}")
for i in (0, 49, 99, 199):
    print(f"  it {i + 1:3d}: total {h['total'][i]:.4f}  cyc {h['cyc'][i]:.4f}  "
          f"disc A/B {h['disc_A'][i]:.4f}/{h['disc_B'][i]:.4f}")

out = enhance_images(enh.E, sparse_test)[:, 0]
occ_in = np.array([occupancy(x) for x in sparse_test])
occ_out = np.array([occupancy(x) for x in out])
print(f"\nheld-out sparse images: occupancy {occ_in.mean():.4f} -> {occ_out.mean():.4f}, "
      f"denser on {np.mean(occ_out > occ_in):.1%}")
print(f"mean intensity ratio out/in: {out.mean() / sparse_test.mean():.2f}")
print("dense reference occupancy:", f"{np.mean([occupancy(x) for x in dense]):.4f}")
