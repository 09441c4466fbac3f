"""Fit the neural SDF to a partial scan with sensor losses only.

Builds the synthetic upper-hemisphere scan, runs a short optimization with
the mask/depth/point/eikonal/plane terms (no guidance), and extracts the
mesh. Without a prior, the unobserved lower half keeps the shape of the
sphere initialization; compare with 03_complete_with_guidance.py.
"""

from pathlib import Path

import numpy as np

from pointfill import evalx, synthetic, trainer

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

fixture = synthetic.hemisphere_scan(grid=24, fx=30.0)
obs = fixture.observation
print(
    f"scan: {len(obs.points)} surface points on {obs.n_rays} rays, "
    f"normalized sphere r={fixture.sphere_radius:.3f} at "
    f"{np.round(fixture.sphere_center, 3)}"
)

config = trainer.TrainConfig(
    prompt="",
    epochs=200,
    iterations_per_epoch=5,
    render_resolution=(24, 24),
    pixel_batch=384,
    samples_per_ray=48,
    learning_rate=1e-3,
    mesh_resolution=64,
    seed=0,
)
result = trainer.train(config, obs, provider=None, out_dir=out_dir / "fit")

first = result.history[0][2]
last = result.history[-1][2]
print(f"point loss:  {first.point:.4f} -> {last.point:.4f}")
print(f"mask loss:   {first.mask:.4f} -> {last.mask:.4f}")
print(f"depth loss:  {first.depth:.5f} -> {last.depth:.5f}")

gt = synthetic.sphere_surface_points(fixture, 20000, seed=1)
pred = evalx.sample_mesh(result.mesh, 20000, seed=2)
print(f"chamfer to the full sphere: {evalx.chamfer(pred, gt):.4f} scene units")
print(f"mesh written to {result.mesh_path}")
