"""Complete the partial scan with score-distillation guidance.

Same scan as demo 02, but a deterministic mock guidance provider pulls
curriculum-sampled views toward pre-rendered reference images of the full
sphere. The camera schedule starts at the sensor pose and widens its
azimuth range at epochs 20/50/80/100/120; 200 epochs leave plenty of
full-coverage guidance after the last widening. Expect several minutes
of CPU time.
"""

from pathlib import Path

import numpy as np

from pointfill import evalx, guidance, synthetic, trainer
from pointfill.fields import DensityParams
from pointfill.renderer import SamplingConfig

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

fixture = synthetic.hemisphere_scan(grid=24, fx=30.0)
obs = fixture.observation

dp = DensityParams()
dist = float(np.linalg.norm(obs.pose.translation))
sampling = SamplingConfig(
    near=dist - 1.0, far=dist + 1.0, samples_per_ray=48, stratified=False
)
references = synthetic.sphere_reference_views(
    fixture, dp, sampling, n_azimuths=12, resolution=(24, 24)
)
guidance.save_reference_views(out_dir / "references", references)
provider = guidance.mock_guidance(references, guidance.make_schedule())
print(f"mock guidance over {len(references)} reference azimuths")

config = trainer.TrainConfig(
    prompt="a sphere",
    epochs=200,
    iterations_per_epoch=5,
    render_resolution=(24, 24),
    pixel_batch=384,
    samples_per_ray=48,
    learning_rate=1e-3,
    mesh_resolution=64,
    seed=0,
)
result = trainer.train(config, obs, provider, out_dir=out_dir / "guided")

gt = synthetic.sphere_surface_points(fixture, 20000, seed=1)
pred = evalx.sample_mesh(result.mesh, 20000, seed=2)
print(f"chamfer to the full sphere: {evalx.chamfer(pred, gt):.4f} scene units")
print(f"mesh written to {result.mesh_path}")
print("compare against the sensor-only run from 02_fit_partial_scan.py")
