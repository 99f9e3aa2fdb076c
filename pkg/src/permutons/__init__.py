"""Permutons: limits of large permutations, their densities and entropy.

A permuton is a probability measure on the unit square with uniform
marginals -- the analytic limit object of a sequence of large permutations.
This package computes with them:

- ``core``: grid and segment permuton types, metrics, sampling, coarsening;
- ``patterns``: exact (k <= 3) and Monte-Carlo pattern densities;
- ``entropy``: permuton entropy, refinement diagnostics, heat-flow smoothing;
- ``insertion``: insertion-measure representation and its entropy form;
- ``starmodel``: closed-form one-parameter 1 2 model, free energy and Newton
  solver for star-pattern models, Mahonian generating function;
- ``optimizer``: entropy maximization under pattern-density constraints and
  Euler-Lagrange residual checks;
- ``regions``: feasible-region boundary curves and parameterized families;
- ``oracle``: exhaustive small-n counts and large-deviations estimates;
- ``cli``: the ``permutons`` command.

Attributes are loaded lazily (PEP 562) so that importing the package does
not import numpy; the CLI relies on this to pin BLAS thread-count env vars
before numpy initializes.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # core
    "GridPermuton": "core",
    "CDFField": "core",
    "SegmentPermuton": "core",
    "Permutation": "core",
    "MARGINAL_TOL": "core",
    "uniform_grid": "core",
    "grid_from_permutation": "core",
    "cdf": "core",
    "rect_distance": "core",
    "cdf_linf_distance": "core",
    "coarsen": "core",
    "sample_points": "core",
    "sample_permutation": "core",
    "gamma_ab": "core",
    "rebalance_marginals": "core",
    "grid_to_csv": "core",
    "grid_from_csv": "core",
    # patterns
    "PatternSpec": "patterns",
    "DensityEstimate": "patterns",
    "pattern_count": "patterns",
    "density_grid_exact": "patterns",
    "density_grid_exact_with_grad": "patterns",
    "density_mc": "patterns",
    # entropy
    "HeatFlowSpec": "entropy",
    "entropy_grid": "entropy",
    "riemann_refinement": "entropy",
    "heat_flow": "entropy",
    # insertion
    "InsertionFamily": "insertion",
    "ReconstructionResult": "insertion",
    "flat_family": "insertion",
    "star12_family": "insertion",
    "insertion_from_permuton": "insertion",
    "permuton_from_insertion": "insertion",
    "reconstruct": "insertion",
    "insertion_entropy": "insertion",
    "family_to_csv": "insertion",
    "family_from_csv": "insertion",
    # starmodel
    "ConvergenceError": "starmodel",
    "Star12Params": "starmodel",
    "StarModel": "starmodel",
    "StarSolution": "starmodel",
    "star12_rho": "starmodel",
    "star12_entropy": "starmodel",
    "star12_r_from_rho": "starmodel",
    "star12_cdf": "starmodel",
    "star12_density": "starmodel",
    "star12_grid": "starmodel",
    "mahonian_log_gf": "starmodel",
    "free_energy": "starmodel",
    "grad_free_energy": "starmodel",
    "hessian_free_energy": "starmodel",
    "star_densities": "starmodel",
    "solve_star": "starmodel",
    "region_star23_boundary": "starmodel",
    # optimizer
    "Constraint": "optimizer",
    "ConstraintSet": "optimizer",
    "OptimizerResult": "optimizer",
    "maximize_entropy": "optimizer",
    "pde_residual_12": "optimizer",
    "pde_residual_123": "optimizer",
    # regions
    "RegionCurve": "regions",
    "region_123_321": "regions",
    "dimple": "regions",
    "gamma_ab_sweep": "regions",
    # oracle
    "joint_star_counts": "oracle",
    "ldp_estimate": "oracle",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(set(globals()) | set(__all__))
