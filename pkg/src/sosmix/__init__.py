"""Simulation and exact-oracle toolkit for solid-on-solid interface dynamics."""
from sosmix.model import (
    ConditionalLaw,
    InvariantError,
    ModelParams,
    ValidationError,
    conditional_law,
    conditional_mean,
    conditional_mean_direct,
    energy,
    epsilon,
    leq,
)
from sosmix.dynamics import ChainKind, UpdateDraw, run_chain, stream
from sosmix.coupling import CoupledPair, coalescence_time, exact_pair_drift, grand_step
from sosmix.wilson import WilsonWeights, distance, gap_upper_bound, weights
from sosmix.equilibrium import build_tables, event_prob, sample_exact
from sosmix.experiments import relaxation_experiment, scaling_sweep

__all__ = [
    "ChainKind",
    "ConditionalLaw",
    "CoupledPair",
    "InvariantError",
    "ModelParams",
    "UpdateDraw",
    "ValidationError",
    "WilsonWeights",
    "build_tables",
    "coalescence_time",
    "conditional_law",
    "conditional_mean",
    "conditional_mean_direct",
    "distance",
    "energy",
    "epsilon",
    "event_prob",
    "exact_pair_drift",
    "gap_upper_bound",
    "grand_step",
    "leq",
    "relaxation_experiment",
    "run_chain",
    "sample_exact",
    "scaling_sweep",
    "stream",
    "weights",
]
