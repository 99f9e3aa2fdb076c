"""Permuton entropy, refinement diagnostics, and heat-flow smoothing.

The entropy of a permuton with density g is H = -int g log g over the unit
square; by Jensen it is <= 0 with equality only for the uniform measure, and
it is -infinity for singular permutons.  For the step permuton of a cell-mass
grid w the density is m^2 w, so

    H(gamma^m) = -sum_ij w_ij log(m^2 w_ij).

Coarsening a grid averages cells, and -x log x is concave, so H(gamma^m) is
nonincreasing as m refines toward the underlying measure; tracking H along a
divisor chain (``riemann_refinement``) shows convergence for absolutely
continuous permutons and logarithmic divergence for singular ones (for a
permutation grid, H = -log n exactly).

Heat flow smooths a grid by damping its discrete cosine modes:

    g_t(j, k) = g_0(j, k) * exp(-(j^2 + k^2) t).

The cosine basis (DCT-II, Neumann boundary) is the eigensystem of the grid
Laplacian with zero-flux boundaries, and uniform marginals are equivalent to
the vanishing of all pure modes g(j, 0), g(0, k) for j, k > 0 -- the damping
multiplies zeros there, so marginals are preserved automatically.  Mode
truncation can introduce slightly negative cells; those are clipped and the
marginals restored by alternating row/column rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .core import GridPermuton, MARGINAL_TOL, coarsen, rebalance_marginals


@dataclass(frozen=True)
class HeatFlowSpec:
    """Diffusion time and cosine-mode cutoffs (defaults keep all m modes)."""

    t: float
    j_max: int | None = None
    k_max: int | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("diffusion time must be nonnegative")
        for c in (self.j_max, self.k_max):
            if c is not None and c < 1:
                raise ValueError("mode cutoffs must be >= 1")


def entropy_grid(g: GridPermuton) -> float:
    """H of the step permuton: -sum w log(m^2 w), with 0 log 0 = 0.

    The log argument is formed as w * (m*m) so that near-uniform grids (where
    w * m^2 = 1 exactly in floating point) give entropy exactly 0 rather than
    an accumulation of rounding residue.
    """
    w = g.w
    pos = w > 0
    # + 0.0 normalizes -0.0 so the uniform grid reports exactly 0
    return float(-np.sum(w[pos] * np.log(w[pos] * (g.m * g.m))) + 0.0)


def riemann_refinement(g: GridPermuton, levels) -> list[tuple[int, float]]:
    """Entropy of the coarsened grid at each resolution in ``levels``.

    Every level must divide g.m.  Along increasing levels the sequence is
    nonincreasing (block averaging can only raise -x log x sums).
    """
    out = []
    for m2 in levels:
        out.append((int(m2), entropy_grid(coarsen(g, int(m2)))))
    return out


def heat_flow(g: GridPermuton, spec: HeatFlowSpec) -> GridPermuton:
    """Damp cosine modes by exp(-(j^2+k^2) t), clip, and rebalance."""
    m = g.m
    d = g.density()
    c = dctn(d, norm="ortho")
    modes = np.arange(m)
    damp = np.exp(-spec.t * (modes[:, None] ** 2 + modes[None, :] ** 2))
    j_max = m if spec.j_max is None else min(spec.j_max, m)
    k_max = m if spec.k_max is None else min(spec.k_max, m)
    damp = damp * (modes[:, None] < j_max) * (modes[None, :] < k_max)
    d2 = idctn(c * damp, norm="ortho")
    w2 = d2 / (m * m)
    w2 = np.where(w2 < 0, 0.0, w2)
    target = 1.0 / m
    dev = max(abs(w2.sum(axis=1) - target).max(), abs(w2.sum(axis=0) - target).max())
    if dev > MARGINAL_TOL / 10:
        w2 = rebalance_marginals(w2, tol=MARGINAL_TOL / 10)
    return GridPermuton(w2)
