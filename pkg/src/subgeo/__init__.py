"""Regeneration-split-chain toolkit for subgeometrically ergodic Markov chains."""

__version__ = "0.1.0"

from .rates import (
    PsiSpec,
    RateSpec,
    SeqSpec,
    big_phi,
    big_phi_inverse,
    check_g_membership,
    h_psi,
    n_r_delta,
    rate_sequence,
    submultiplicativity_constant,
)

__all__ = [
    "RateSpec",
    "PsiSpec",
    "SeqSpec",
    "big_phi",
    "big_phi_inverse",
    "rate_sequence",
    "h_psi",
    "check_g_membership",
    "submultiplicativity_constant",
    "n_r_delta",
]
