"""Orthogonal-attention neural operator toolkit (python bindings)."""

from _ono import (  # noqa: F401
    Dataset,
    EpochMetrics,
    EvalResult,
    Mesh,
    Model,
    ModelConfig,
    TrainResult,
    __version__,
    cholesky,
    evaluate,
    expected_parameter_count,
    generate_darcy2d,
    generate_poisson1d,
    load_checkpoint,
    load_dataset,
    onecycle_lr,
    recover_eigenfunctions,
    relative_l2,
    save_checkpoint,
    solve_triangular,
    spectral_truth,
    sym_eig,
    train,
)
