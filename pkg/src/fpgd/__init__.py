"""Finite-precision gradient descent laboratory for ReLU networks.

Submodules: `fparith` (software floating point), `netcore` (networks and
constructors), `graddesc` (perturbed training), `regions` (exact piece and
activation-region counting along lines), `assumptions` (empirical checks),
`oracle` (independent brute-force verifiers), `labkit` (experiment harness).
"""

from .fparith import (
    FloatFormat,
    FpOverflowError,
    FpValue,
    add_fp,
    machine_epsilon,
    matvec_fp,
    mul_fp,
    round_nearest,
)
from .graddesc import (
    Dataset,
    PerturbationSchedule,
    ProbeConfig,
    StepSchedule,
    TrainingDiverged,
    TrainingTrace,
    UpdateBundle,
    empirical_risk,
    exact_updates,
    noisy_matvec_updates,
    perturbed_step,
    train,
)
from .netcore import (
    Architecture,
    Network,
    build_cancellation,
    build_unstable,
    build_yarotsky,
    he_init,
    preactivations,
    realize,
    realize_fp,
    subnetwork,
    unstable_admissibility,
)
from .regions import (
    Line,
    PiecewiseLinear1D,
    RegionCensus,
    count_activation_regions,
    count_pieces,
    telgarsky_bound,
    theorem_threshold,
)

__version__ = "0.1.0"
