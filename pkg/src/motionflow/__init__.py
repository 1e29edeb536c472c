"""Pyramid piecewise flow matching for multi-agent motion synthesis.

The package is organized around a three-stage pipeline:

* a multi-token variational autoencoder that maps fixed-length motion
  sequences to compact token latents (``motion_vae``),
* a pyramid piecewise flow-matching prior that generates the first
  agent's latent coarse-to-fine (``schedule``, ``resampling``,
  ``flow_paths``, ``velocity_model``),
* a semi-noise dual-path flow-matching model that generates each further
  agent's latent as a reaction to the already-generated ones
  (``flow_paths``, ``sampling``).

``toy_data`` provides a fully synthetic interacting-agents corpus with a
closed-form reaction oracle, ``training`` the optimizers and loss steps,
``evaluation`` the statistical reports, and ``cli`` a single executable
covering synthesis, training, sampling, evaluation, verification, and
benchmarking.
"""

__version__ = "0.1.0"
