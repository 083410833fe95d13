"""Drift certificates and rate experiments for stochastic approximation under Markovian noise."""

from .drift import (
    DriftCertificate,
    DriftConstants,
    certify_drift,
    compute_constants,
    exact_conditional_expectation,
    scalar_recursion_oracle,
    shifted_energy,
    weighted_rs_check,
)
from .exceptions import (
    ConfigurationError,
    DivergenceError,
    InputError,
    ModelError,
    NumericalError,
    PMDriftError,
    StructureError,
)
from .gtd import FactorSpec, FiniteMDP, GeneralizedTDModel, PolicyPair, random_mdp, random_policy
from .markov import FiniteMarkovChain, affine_poisson, contraction_setup, poisson_solve, stationary_distribution
from .moreau import MoreauEnvelope, choose_xi, envelope, envelope_gradient, m_norm, mu_xi, prox_point
from .norms import Norm
from .rates import RateReport, l2_slope, pathwise_rate, rate_window
from .sa import AffineSAProblem, LearningRateSchedule, Trajectory, run, run_ensemble

__version__ = "0.1.0"
