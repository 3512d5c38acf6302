"""Heterogeneous treatment effect estimation toolkit.

Submodules:
    kernels    numba/numpy compute kernels (CATEKIT_BACKEND selects)
    tensor     dense float64 tensors and shared error types
    graph      reverse-mode autodiff over the fixed primitive set
    diverter   the control/treatment flow gate
    causalnet  the diverter-gated outcome network
    baselines  adjusted regression, regression forests, S-/T-learners
    datagen    seeded synthetic benchmark generators
    evaluate   effect-estimate scoring (MSE, relative MSE, scatter export)
    harness    experiment sweeps, result CSVs, plots
    cli        command line entry point
"""

__version__ = "0.1.0"
