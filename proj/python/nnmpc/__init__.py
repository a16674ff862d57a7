"""Neural-network imitation of nonlinear MPC with certified error bounds.

The heavy lifting lives in the compiled extension; this package re-exports
its surface.
"""

from nnmpc._core import (  # noqa: F401
    BoundInfeasibleError,
    ConfigError,
    ControllerKind,
    Dataset,
    DiscreteModel,
    GridSpec,
    Mlp,
    MpcController,
    NumericalError,
    OcpSpec,
    PendulumParams,
    Sample,
    SolveStatus,
    SqpSettings,
    TrainConfig,
    __version__,
    certify,
    control_law_jacobian,
    covering_radius,
    epsilon_d,
    generate_dataset,
    lipschitz_nn_lower_sampled,
    lipschitz_nn_upper,
    load_dataset,
    load_mlp,
    loss_full,
    loss_mse,
    loss_sens,
    pendulum_model,
    r2_score,
    required_delta,
    sample_uniform,
    seed_grid,
    simulate,
    solve_ocp,
    spectral_norm,
    train,
)
