"""Configuration-space signed distance fields for serial-chain robots.

Submodules:
    robot      kinematics, limits, sphere-cluster geometry
    geometry   ground-truth collision checks and C-space distance grids
    neighbors  exact and graph-based nearest-neighbor indexes
    datasets   training-tuple generation and the spatial-hashing pipeline
    net        the learnable field, composite loss, training loop
    trajopt    offline safety-constrained trajectory optimization
    qp         dense ADMM quadratic-program solver
    mpc        receding-horizon safety-constrained control
    evalbench  metrics, latency, and ablation harnesses
    cli        command-line entry point
"""

__version__ = "0.1.0"
