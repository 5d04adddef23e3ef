"""Generate a synthetic knee-like phantom and look at its ground truth.

Writes slice images plus the truth meshes' wireframe silhouettes to
demos/output/, and prints the planted landmark and label census.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from logismos.phantom import PhantomSpec, generate_phantom

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

spec = PhantomSpec(noise_pct=5.0, fluid_pockets=True, regional_intensity=True,
                   n_fluid_pockets=8)
case = generate_phantom(spec, seed=42)

print("volume dims:", case.volume.dims, "spacing:", case.volume.spacing)
labels = case.truth_labels.data
for code, name in [(0, "background"), (1, "femur bone"), (2, "femur cartilage"),
                   (3, "tibia bone"), (4, "tibia cartilage")]:
    print(f"  label {code} ({name}): {int((labels == code).sum())} voxels")
print("planted notch (mm):", np.round(case.params["notch"], 2))

fig, axes = plt.subplots(1, 3, figsize=(13, 4.5))
mid = [d // 2 for d in case.volume.dims]
for ax, (axis, idx) in zip(axes, [(0, mid[0]), (1, mid[1]), (2, 24)]):
    sl = [slice(None)] * 3
    sl[axis] = idx
    img = case.volume.data[tuple(sl)]
    ax.imshow(img.T, cmap="gray", origin="lower", vmin=0, vmax=220)
    ax.set_title(f"axis {axis}, slice {idx}")
    for key, color in [(("femur", "bone"), "tab:red"),
                       (("femur", "cartilage"), "tab:orange"),
                       (("tibia", "bone"), "tab:blue"),
                       (("tibia", "cartilage"), "tab:cyan")]:
        from logismos.mesh import mesh_plane_contours
        normal = np.zeros(3)
        normal[axis] = 1.0
        point = case.volume.voxel_center((idx, idx, idx))
        keep = [a for a in range(3) if a != axis]
        for poly in mesh_plane_contours(case.truth_meshes[key], normal, point):
            uv = (poly[:, keep] - np.asarray(case.volume.origin)[keep]) \
                / np.asarray(case.volume.spacing)[keep]
            ax.plot(uv[:, 0], uv[:, 1], color=color, lw=1.0)
fig.tight_layout()
fig.savefig(OUT / "01_phantom_slices.png", dpi=110)
print(f"wrote {OUT / '01_phantom_slices.png'}")
