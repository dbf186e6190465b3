"""Ranking policies for two-sided matching markets and a market simulator to evaluate them."""
from .datagen import SyntheticConfig, generate_market
from .errors import (
    DegenerateEquilibriumError,
    DomainError,
    InfeasibleMatrixError,
    MatchrankError,
    NotConvergedError,
    NumericalOverflowError,
    SizeGuardError,
)
from .market import (
    DeterministicPolicy,
    ExaminationFunction,
    PreferenceMatrices,
    StochasticPolicy,
    examination_value,
)
from .policies import naive_policy, reciprocal_policy
from .simulator import estimate_sw, exact_sw, gini, simulate_once
from .sw import BvnDecomposition, SWConfig, approx_sw, bvn_decompose, expected_exposure, grad_approx_sw, solve_sw
from .tu import (
    EmbeddingSet,
    EquilibriumMatching,
    TUConfig,
    build_embeddings,
    recover_transfers,
    solve_ipfp,
    top_k_by_dot,
    tu_policy,
)

__version__ = "0.1.0"

__all__ = [
    "BvnDecomposition", "DegenerateEquilibriumError", "DeterministicPolicy", "DomainError",
    "EmbeddingSet", "EquilibriumMatching", "ExaminationFunction", "InfeasibleMatrixError",
    "MatchrankError", "NotConvergedError", "NumericalOverflowError", "PreferenceMatrices",
    "SWConfig", "SizeGuardError", "StochasticPolicy", "SyntheticConfig", "TUConfig",
    "approx_sw", "build_embeddings", "bvn_decompose", "estimate_sw", "exact_sw",
    "examination_value", "expected_exposure", "generate_market", "gini", "grad_approx_sw",
    "naive_policy", "recover_transfers", "reciprocal_policy", "simulate_once", "solve_ipfp",
    "solve_sw", "top_k_by_dot", "tu_policy",
]
