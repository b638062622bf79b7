"""Learned KKL observers with frequency tuning."""

from ._core import (
    Autoencoder,
    FilterDesign,
    Observer,
    bessel_poles,
    bessel_poles_raw,
    build_design,
    convergence_time,
    evaluate,
    evaluate_autoencoder,
    frequency_gain,
    generate_dataset,
    h2_norm,
    hinf_norm,
    lhs,
    pde_residual,
    simulate,
    solve_lyapunov,
    sweep,
    train_autoencoder,
    train_supervised,
)

__all__ = [
    "Autoencoder",
    "FilterDesign",
    "Observer",
    "bessel_poles",
    "bessel_poles_raw",
    "build_design",
    "convergence_time",
    "evaluate",
    "evaluate_autoencoder",
    "frequency_gain",
    "generate_dataset",
    "h2_norm",
    "hinf_norm",
    "lhs",
    "pde_residual",
    "simulate",
    "solve_lyapunov",
    "sweep",
    "train_autoencoder",
    "train_supervised",
]

__version__ = "0.1.0"
