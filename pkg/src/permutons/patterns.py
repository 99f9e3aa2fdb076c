"""Pattern densities of permutations and permutons, exact and Monte Carlo.

The density rho_tau(gamma) of a pattern tau in S_k is the probability that k
i.i.d. points of the permuton gamma, sorted by x-coordinate, have y-values
ordered like tau.  For a step permuton with cell masses w this probability is
a polynomial in the entries of w, and for k <= 3 it is computed here exactly
in O(m^2) as follows.

Fix one point P in cell (i, j) with local offsets (u, v) in [0,1]^2.  The
masses of the four quadrants cut by P are affine in (u, v, uv):

    A = G(x, y)             (points below-left, CDF value)
    B = 1 - x - y + G       (above-right)
    C = x - G               (left-above)
    D = y - G               (right-below)

with coefficient fields in the cell built from three prefix-sum channels of
w (strict 2-D prefix, strict same-row prefix, strict same-column prefix) and
w itself.  A pattern probability is an expectation over P ~ gamma of products
of quadrant masses, e.g.

    rho_123 = 6 * E[A(P) B(P)],    rho_**3 = rho_123 + rho_213 = 3 * E[A(P)^2],

and for each cell the expectation of a product of two affine forms over
(u, v) ~ uniform reduces to a fixed 4x4 moment table of the basis
(1, u, v, uv).  Same-cell coincidences (two or three points in one cell) are
handled exactly by the same algebra: the uv channel carries precisely the
within-cell conditional probabilities, which is why the six length-3
densities sum to exactly 1.

The same structure yields the analytic gradient d rho / d w: the quadrant
coefficient fields are linear in w through prefix sums, so the adjoint is a
sum of suffix scans of weighted channel products.  Gradients power the
constrained entropy optimizer.

Monte-Carlo densities draw k points per trial (vectorized across trials) and
report the binomial standard error; star classes *...*l are matched by the
rank of the last point alone.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import GridPermuton, Permutation, SegmentPermuton, sample_points

# E[(basis_a)(basis_b)] over (u,v) uniform in the unit cell, basis (1,u,v,uv).
_BIL = np.array([
    [1.0, 1 / 2, 1 / 2, 1 / 4],
    [1 / 2, 1 / 3, 1 / 4, 1 / 6],
    [1 / 2, 1 / 4, 1 / 3, 1 / 6],
    [1 / 4, 1 / 6, 1 / 6, 1 / 9],
])


@dataclass(frozen=True)
class PatternSpec:
    """A pattern: explicit one-line values, or a star class *...*ell.

    The star class (k, ell) is the set of tau in S_k whose last symbol is
    ell, i.e. the final point has rank ell among the k points.
    """

    values: tuple[int, ...] | None = None
    star: tuple[int, int] | None = None

    def __post_init__(self):
        if (self.values is None) == (self.star is None):
            raise ValueError("specify exactly one of explicit values or star class")
        if self.values is not None:
            v = tuple(int(x) for x in self.values)
            if sorted(v) != list(range(1, len(v) + 1)):
                raise ValueError(f"pattern {v} is not a bijection on 1..k")
            object.__setattr__(self, "values", v)
        else:
            k, ell = (int(x) for x in self.star)
            if not 1 <= ell <= k:
                raise ValueError(f"star class needs 1 <= ell <= k, got ({k}, {ell})")
            object.__setattr__(self, "star", (k, ell))

    @classmethod
    def explicit(cls, values) -> "PatternSpec":
        return cls(values=tuple(values))

    @classmethod
    def star_class(cls, k: int, ell: int) -> "PatternSpec":
        return cls(star=(k, ell))

    @classmethod
    def parse(cls, text: str) -> "PatternSpec":
        """Parse CLI syntax: "12", "321" explicit; "*2", "**3" star classes."""
        text = text.strip()
        if text.startswith("*"):
            stars = len(text) - len(text.lstrip("*"))
            rest = text[stars:]
            if not rest.isdigit():
                raise ValueError(f"bad star pattern {text!r}; expected like '**3'")
            return cls.star_class(stars + 1, int(rest))
        if not text.isdigit():
            raise ValueError(f"bad pattern {text!r}; expected digits like '132'")
        return cls.explicit(int(ch) for ch in text)

    @property
    def k(self) -> int:
        return len(self.values) if self.values is not None else self.star[0]

    @property
    def label(self) -> str:
        if self.values is not None:
            return "".join(str(v) for v in self.values)
        k, ell = self.star
        return "*" * (k - 1) + str(ell)

    def members(self) -> tuple[tuple[int, ...], ...]:
        """Explicit patterns in the class (the singleton for explicit specs)."""
        if self.values is not None:
            return (self.values,)
        k, ell = self.star
        out = []
        for head in itertools.permutations([v for v in range(1, k + 1) if v != ell]):
            out.append(head + (ell,))
        return tuple(out)


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    stderr: float
    trials: int

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("density must lie in [0, 1]")
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")


def pattern_count(pi: Permutation, tau: PatternSpec) -> int:
    """Number of index k-subsets of pi realizing tau (or its star class).

    Direct enumeration over C(n, k) subsets; intended for n <= 20, k <= 4.
    """
    n, k = pi.n, tau.k
    if k > n:
        raise ValueError(f"pattern length {k} exceeds permutation length {n}")
    vals = pi.values
    count = 0
    if tau.star is not None:
        ell = tau.star[1]
        for idx in itertools.combinations(range(n), k):
            sub = vals[list(idx)]
            # star class: only the rank of the last element matters
            if int(np.sum(sub <= sub[-1])) == ell:
                count += 1
        return count
    target = np.asarray(tau.values)
    for idx in itertools.combinations(range(n), k):
        sub = vals[list(idx)]
        if np.array_equal(np.argsort(np.argsort(sub)) + 1, target):
            count += 1
    return count


def _channels(w: np.ndarray):
    """Quadrant coefficient fields (4, m, m) for A, B, C, D (see module doc)."""
    m = w.shape[0]
    pref = np.cumsum(np.cumsum(w, axis=0), axis=1)
    g00 = np.zeros((m, m))
    g00[1:, 1:] = pref[:-1, :-1]        # sum over i' < i, j' < j
    gu = np.zeros((m, m))
    gu[:, 1:] = np.cumsum(w, axis=1)[:, :-1]   # same row i, j' < j
    gv = np.zeros((m, m))
    gv[1:, :] = np.cumsum(w, axis=0)[:-1, :]   # same column j, i' < i
    xi = (np.arange(m) / m)[:, None] * np.ones((1, m))
    yj = (np.arange(m) / m)[None, :] * np.ones((m, 1))
    one = np.ones((m, m))
    inv = one / m
    A = np.stack([g00, gu, gv, w])
    B = np.stack([1.0 - xi - yj + g00, gu - inv, gv - inv, w])
    C = np.stack([xi - g00, inv - gu, -gv, -w])
    D = np.stack([yj - g00, -gu, inv - gv, -w])
    U = np.stack([one, np.zeros_like(w), np.zeros_like(w), np.zeros_like(w)])
    return A, B, C, D, U


def _J(w, P, Q) -> float:
    """E over P0 ~ gamma of (quadrant P mass)(quadrant Q mass)."""
    q = np.einsum("ab,aij,bij->ij", _BIL, P, Q)
    return float(np.sum(w * q))


def _suffix2d_strict(T):
    out = np.zeros_like(T)
    out[:-1, :-1] = np.cumsum(np.cumsum(T[::-1, ::-1], 0), 1)[::-1, ::-1][1:, 1:]
    return out


def _suffix_axis1_strict(T):
    out = np.zeros_like(T)
    out[:, :-1] = np.cumsum(T[:, ::-1], 1)[:, ::-1][:, 1:]
    return out


def _suffix_axis0_strict(T):
    out = np.zeros_like(T)
    out[:-1, :] = np.cumsum(T[::-1, :], 0)[::-1, :][1:, :]
    return out


def _grad_J(w, P, Q, sP: float, sQ: float):
    """Gradient of _J(w, P, Q) in w.

    sP, sQ are the signs of the w-dependent parts of the quadrant fields
    (+1 for A and B, -1 for C and D, 0 for the constant field U); the affine
    parts contribute only through the direct term.
    """
    q = np.einsum("ab,aij,bij->ij", _BIL, P, Q)
    TQ = np.einsum("cb,bij->cij", _BIL, Q)
    TP = np.einsum("ac,aij->cij", _BIL, P)
    T = w[None] * (sP * TQ + sQ * TP)
    return (q + _suffix2d_strict(T[0]) + _suffix_axis1_strict(T[1])
            + _suffix_axis0_strict(T[2]) + T[3])


def _exact_terms(tau_values: tuple[int, ...]):
    """Decompose an explicit k <= 3 pattern density into (coeff, Pq, Qq, sP, sQ)."""
    table = {
        (1,): (),
        (1, 2): ((2.0, "A", "U"),),
        (2, 1): ((2.0, "C", "U"),),
        (1, 2, 3): ((6.0, "A", "B"),),
        (3, 2, 1): ((6.0, "C", "D"),),
        (2, 1, 3): ((3.0, "A", "A"), (-6.0, "A", "B")),
        (1, 3, 2): ((3.0, "B", "B"), (-6.0, "A", "B")),
        (2, 3, 1): ((3.0, "C", "C"), (-6.0, "C", "D")),
        (3, 1, 2): ((3.0, "D", "D"), (-6.0, "C", "D")),
    }
    return table[tau_values]


_QSIGN = {"A": 1.0, "B": 1.0, "C": -1.0, "D": -1.0, "U": 0.0}


def density_grid_exact(g: GridPermuton, tau: PatternSpec) -> float:
    """Exact pattern density of the step permuton, k <= 3 (module doc)."""
    value, _ = _density_exact_impl(g.w, tau, want_grad=False)
    return value


def density_grid_exact_with_grad(g: GridPermuton, tau: PatternSpec):
    """Exact density and its analytic gradient d rho / d w (same algebra)."""
    return _density_exact_impl(g.w, tau, want_grad=True)


def _density_exact_impl(w: np.ndarray, tau: PatternSpec, want_grad: bool):
    if tau.k > 3:
        raise ValueError("exact grid densities cover k <= 3 only; use density_mc")
    if tau.k == 1:
        return 1.0, (np.zeros_like(w) if want_grad else None)
    A, B, C, D, U = _channels(w)
    fields = {"A": A, "B": B, "C": C, "D": D, "U": U}
    value = 0.0
    grad = np.zeros_like(w) if want_grad else None
    for member in tau.members():
        for coeff, pn, qn in _exact_terms(member):
            P, Q = fields[pn], fields[qn]
            value += coeff * _J(w, P, Q)
            if want_grad:
                grad += coeff * _grad_J(w, P, Q, _QSIGN[pn], _QSIGN[qn])
    return value, grad


def _ranks_rows(y: np.ndarray) -> np.ndarray:
    """Row-wise ranks (1-based) of y values."""
    return np.argsort(np.argsort(y, axis=1), axis=1) + 1


def density_mc(source: GridPermuton | SegmentPermuton, tau: PatternSpec,
               trials: int, seed: int | np.random.Generator,
               n_points: int | None = None) -> DensityEstimate:
    """Monte-Carlo pattern density.

    With n_points = k (default) each trial draws k points and records the 0/1
    pattern indicator; the standard error is binomial.  With n_points > k the
    per-trial statistic is pattern_count / C(n_points, k) over a sampled
    permutation of n_points points (lower variance, slower per trial).
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    k = tau.k
    n_points = k if n_points is None else int(n_points)
    if n_points < k:
        raise ValueError("n_points must be at least the pattern length")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n_points == k:
        hits = 0
        chunk = 200_000
        done = 0
        while done < trials:
            t = min(chunk, trials - done)
            x, y = sample_points(source, t * k, rng)
            x = x.reshape(t, k)
            y = y.reshape(t, k)
            order = np.argsort(x, axis=1)
            ysorted = np.take_along_axis(y, order, axis=1)
            ranks = _ranks_rows(ysorted)
            if tau.star is not None:
                hits += int(np.sum(ranks[:, -1] == tau.star[1]))
            else:
                hits += int(np.sum(np.all(ranks == np.asarray(tau.values), axis=1)))
            done += t
        value = hits / trials
        stderr = math.sqrt(max(value * (1.0 - value), 0.0) / trials)
        return DensityEstimate(value, stderr, trials)
    # subset-averaged estimator
    from .core import sample_permutation
    total = math.comb(n_points, k)
    vals = np.empty(trials)
    for t in range(trials):
        pi = sample_permutation(source, n_points, rng)
        vals[t] = pattern_count(pi, tau) / total
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return DensityEstimate(value, stderr, trials)
