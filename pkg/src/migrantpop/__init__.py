# src/migrantpop/__init__.py
"""Age-structured migrant population dynamics.

Two engines over one model: a closed-form evolution of product-observable
expectations for a population with immigration, aging, and departure, and
an exact snapshot sampler for the same law, cross-validated through the
experiment harness.
"""

from .analytic import (
    ConstantRateModel,
    ConvolutionState,
    CorrelationKernel,
    DeterministicState,
    EmptyState,
    IntensityKernel,
    PoissonState,
    PopulationState,
    RateModel,
    SeparableExponentialRateModel,
    SeparatingObservable,
    SurvivorState,
    TabulatedRateModel,
    TransportedObservable,
    banach_norm,
    convergence_bound,
    convolve_kernels,
    default_a_max,
    evolve_intensity,
    evolve_kernel,
    evolved_expectation,
    evolved_state_with_immigration,
    functional_gap_bound,
    generator_expectation,
    immigration_intensity,
    kernel_norm,
    poisson_kernel,
    poisson_log_expectation,
    stationary_intensity,
    thin_kernel,
    transport_observable,
)
from .core import (
    CallableFunctional,
    FiniteConfiguration,
    MarkedPoint,
    OrderSplitFunctional,
    ProductFunctional,
    ProductSplitFunctional,
    QuadratureSpec,
    TemperingWeight,
    Window,
    bogoliubov_product,
    build_phase_grid,
    exp_decay_weight,
    lp_integral,
    minlos_check,
    phase_integral,
    spatial_grid,
    tempering_sum,
)
from .sampler import (
    DensityEstimate,
    RngSpec,
    SnapshotBatch,
    estimate_density,
    estimate_functional,
    merge_batches,
    read_batch_csv,
    sample_batch,
    sample_poisson_config,
    simulate_snapshot,
    thin_batch,
    write_batch_csv,
)

__version__ = "0.1.0"

__all__ = [
    "CallableFunctional",
    "ConstantRateModel",
    "ConvolutionState",
    "CorrelationKernel",
    "DensityEstimate",
    "DeterministicState",
    "EmptyState",
    "FiniteConfiguration",
    "IntensityKernel",
    "MarkedPoint",
    "OrderSplitFunctional",
    "PoissonState",
    "PopulationState",
    "ProductFunctional",
    "ProductSplitFunctional",
    "QuadratureSpec",
    "RateModel",
    "RngSpec",
    "SeparableExponentialRateModel",
    "SeparatingObservable",
    "SnapshotBatch",
    "SurvivorState",
    "TabulatedRateModel",
    "TemperingWeight",
    "TransportedObservable",
    "Window",
    "banach_norm",
    "bogoliubov_product",
    "build_phase_grid",
    "convergence_bound",
    "convolve_kernels",
    "default_a_max",
    "estimate_density",
    "estimate_functional",
    "evolve_intensity",
    "evolve_kernel",
    "evolved_expectation",
    "evolved_state_with_immigration",
    "exp_decay_weight",
    "functional_gap_bound",
    "generator_expectation",
    "immigration_intensity",
    "kernel_norm",
    "lp_integral",
    "merge_batches",
    "minlos_check",
    "phase_integral",
    "poisson_kernel",
    "poisson_log_expectation",
    "read_batch_csv",
    "sample_batch",
    "sample_poisson_config",
    "simulate_snapshot",
    "spatial_grid",
    "stationary_intensity",
    "tempering_sum",
    "thin_batch",
    "thin_kernel",
    "transport_observable",
    "write_batch_csv",
    "__version__",
]
