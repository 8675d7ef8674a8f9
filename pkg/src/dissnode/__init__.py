"""dissnode: neural ODE identification with dissipativity certificates.

Submodules
----------
matkit
    Symmetric eigensolver (cyclic Jacobi) and block assembly.
simkit
    Duffing benchmark system, fixed-step RK4, dataset generation, CSV I/O.
neuralfield
    Dense MLP vector fields, rollouts, reverse-mode gradients, training.
certkit
    Supply rates, slope-restriction certificates, verification and search.
perturbkit
    Certificate-constrained weight perturbation solvers.
pipeline
    End-to-end orchestration, model comparison, reporting, CLI.
"""

__version__ = "0.1.0"

from . import certkit, errors, matkit, neuralfield, perturbkit, pipeline, simkit  # noqa: F401
