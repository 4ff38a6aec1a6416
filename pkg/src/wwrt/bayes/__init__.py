"""Posterior construction, optimization and sampling for the compartmental models."""

import os

import jax

# The posterior graphs are many tiny scalar/vector ops; the legacy XLA CPU
# runtime dispatches them roughly twice as fast as the thunk runtime. The
# flag only exists in the 0.4-0.6 series, and XLA aborts on unknown flags,
# so it is set only there and only if the user has not configured XLA.
if jax.__version__.split(".")[:2] in (["0", "4"], ["0", "5"], ["0", "6"]) and "XLA_FLAGS" not in os.environ:
    os.environ["XLA_FLAGS"] = "--xla_cpu_use_thunk_runtime=false"

# Likelihood gradients are compared against finite differences at 1e-3
# relative accuracy and fed to a Hamiltonian integrator; float32 is not
# enough for either.
jax.config.update("jax_enable_x64", True)
