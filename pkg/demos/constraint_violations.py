"""
How often does the partially corrected sampler leave the feasible region?
=========================================================================

Sampler 1.2 fixes the latent-variable transform but still draws the
covariance without the constraint implied by the observed choices. Each
iteration whose working-parameter draw would reclassify some observation is
flagged. The fully corrected 1.3 rejects those draws instead.
"""

import numpy as np

from mdaprobit import PriorSpec, SamplerConfig, SimStudyConfig, generate_simulation, run_chain
from mdaprobit.model import classify_rows

sim = generate_simulation(SimStudyConfig(seed=0))
prior = PriorSpec.default(2, 2)

# keep_latent stores W for a few observations (0-based indices)
config = SamplerConfig(iterations=3000, burn_in=1000, keep_latent=(6, 7, 33))
partial = run_chain("1.2", sim.data, prior, config)
full = run_chain("1.3", sim.data, prior, config)

print(f"1.2 violation fraction: {partial.violation_fraction:.3f}")
print(f"1.3 violation fraction: {full.violation_fraction:.3f}")

# In 1.3 the stored latents always reproduce the observed choice.
for j, i in enumerate(config.keep_latent):
    choices = classify_rows(full.latent[:, j, :])
    print(f"observation {i + 1}: Y = {sim.data.Y[i]}, 1.3 draws consistent: {np.all(choices == sim.data.Y[i])}")
