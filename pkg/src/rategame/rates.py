"""Distributions over service rates and probability measures built on them.

Three concrete representations cover everything the solvers need:

* :class:`DensityRateDistribution` for smooth laws given by a density,
  integrated by composite Gauss-Legendre panels split at known kinks;
* :class:`DiscreteRateDistribution` for atomic laws, integrated exactly;
* :class:`CdfRateDistribution` for laws known only through their CDF
  (the best-response distribution is one), integrated by parts so the
  integrand's derivative does the smoothing work.

:class:`FairnessMeasure` represents how cumulative idleness is shared
across rate classes, either as a discrete measure on observed rates or
as a density with respect to a rate distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "gauss_legendre_panels",
    "RateDistribution",
    "DensityRateDistribution",
    "DiscreteRateDistribution",
    "CdfRateDistribution",
    "uniform_rate_distribution",
    "point_mass_rate_distribution",
    "FairnessMeasure",
]

_NODES_PER_PANEL = 64


@lru_cache(maxsize=8)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def gauss_legendre_panels(a: float, b: float, kinks: Sequence[float] = (),
                          nodes_per_panel: int = _NODES_PER_PANEL,
                          min_panels: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights on [a, b], split at ``kinks``.

    Kinks outside (a, b) are ignored. Accuracy is spectral on each panel,
    so placing every non-smooth point of the integrand in ``kinks`` keeps
    the composite rule at near machine precision.
    """
    if b < a:
        raise ValueError("empty interval")
    if b == a:
        return np.array([]), np.array([])
    edges = [a] + sorted({float(k) for k in kinks if a < k < b}) + [b]
    if len(edges) - 1 < min_panels:
        edges = list(np.linspace(a, b, min_panels + 1))
    x0, w0 = _leggauss(nodes_per_panel)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        xs.append(half * x0 + 0.5 * (hi + lo))
        ws.append(half * w0)
    return np.concatenate(xs), np.concatenate(ws)


class RateDistribution:
    """Common interface: CDF, integrals against dF, moments, sampling."""

    mu_min: float
    mu_max: float

    def cdf(self, mu):
        raise NotImplementedError

    def integrate(self, g: Callable, dg: Callable | None = None) -> float:
        """Integral of g against dF over the whole support."""
        return self.integrate_between(g, dg, self.mu_min, self.mu_max)

    def integrate_between(self, g: Callable, dg: Callable | None,
                          a: float, b: float) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights such that sum(w * g(x)) ~ integral g dF."""
        raise NotImplementedError

    @property
    def mean(self) -> float:
        try:
            return self._mean
        except AttributeError:
            self._mean = self.integrate(lambda m: m, lambda m: np.ones_like(m))
            return self._mean

    @property
    def variance(self) -> float:
        try:
            return self._variance
        except AttributeError:
            second = self.integrate(lambda m: m * m, lambda m: 2.0 * m)
            self._variance = max(second - self.mean ** 2, 0.0)
            return self._variance

    def _validate(self, tol: float = 1e-8) -> None:
        total = self.integrate(lambda m: np.ones_like(m), lambda m: np.zeros_like(m))
        if abs(total - 1.0) > tol:
            raise ValueError(f"distribution mass {total!r} != 1")
        if not self.mu_min - 1e-12 <= self.mean <= self.mu_max + 1e-12:
            raise ValueError("mean escapes the support")


class DensityRateDistribution(RateDistribution):
    def __init__(self, mu_min: float, mu_max: float, density: Callable,
                 kinks: Sequence[float] = (), normalize: bool = False):
        if not 0 < mu_min < mu_max:
            raise ValueError("need 0 < mu_min < mu_max")
        self.mu_min = float(mu_min)
        self.mu_max = float(mu_max)
        self.kinks = tuple(sorted({float(k) for k in kinks if mu_min < k < mu_max}))
        self._density = density
        self._norm = 1.0
        if normalize:
            x, w = gauss_legendre_panels(mu_min, mu_max, self.kinks)
            self._norm = float(np.sum(w * np.asarray(density(x), dtype=float)))
            if self._norm <= 0:
                raise ValueError("density integrates to a nonpositive value")
        self._grid, self._grid_cdf = self._build_cdf_grid()
        self._validate()

    def density(self, mu):
        return np.asarray(self._density(np.asarray(mu, dtype=float)), dtype=float) / self._norm

    def _build_cdf_grid(self, points_per_piece: int = 512):
        edges = [self.mu_min, *self.kinks, self.mu_max]
        grid = [np.array([self.mu_min])]
        cdfv = [np.array([0.0])]
        acc = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            xs = np.linspace(lo, hi, points_per_piece + 1)[1:]
            piece = np.empty(xs.size)
            prev = lo
            for i, x in enumerate(xs):
                nx, nw = gauss_legendre_panels(prev, float(x), nodes_per_panel=16)
                acc += float(np.sum(nw * self.density(nx)))
                piece[i] = acc
                prev = float(x)
            grid.append(xs)
            cdfv.append(piece)
        g = np.concatenate(grid)
        c = np.minimum.accumulate(np.concatenate(cdfv)[::-1])[::-1]  # clip stray wiggles
        c = np.maximum.accumulate(c)
        return g, np.clip(c, 0.0, 1.0)

    def cdf(self, mu):
        return np.interp(np.asarray(mu, dtype=float), self._grid, self._grid_cdf,
                         left=0.0, right=1.0)

    def integrate_between(self, g, dg, a, b):
        a = max(a, self.mu_min)
        b = min(b, self.mu_max)
        if b <= a:
            return 0.0
        x, w = gauss_legendre_panels(a, b, self.kinks)
        return float(np.sum(w * self.density(x) * np.asarray(g(x), dtype=float)))

    def sample(self, rng, size):
        u = rng.uniform(0.0, 1.0, size=size)
        return np.interp(u, self._grid_cdf, self._grid)

    def quadrature(self):
        x, w = gauss_legendre_panels(self.mu_min, self.mu_max, self.kinks)
        return x, w * self.density(x)


class DiscreteRateDistribution(RateDistribution):
    def __init__(self, atoms: np.ndarray, weights: np.ndarray):
        atoms = np.asarray(atoms, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if atoms.size == 0:
            raise ValueError("no atoms")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        order = np.argsort(atoms)
        self.atoms = atoms[order]
        self.weights = weights[order]
        self.mu_min = float(self.atoms[0])
        self.mu_max = float(self.atoms[-1])

    def cdf(self, mu):
        mu = np.asarray(mu, dtype=float)
        idx = np.searchsorted(self.atoms, mu, side="right")
        return np.concatenate([[0.0], np.cumsum(self.weights)])[idx]

    def integrate_between(self, g, dg, a, b):
        mask = (self.atoms > a) & (self.atoms <= b)
        if a <= self.atoms[0] <= b:
            mask |= self.atoms == self.atoms[0]
        if not np.any(mask):
            return 0.0
        return float(np.sum(self.weights[mask] * np.asarray(g(self.atoms[mask]), dtype=float)))

    def integrate(self, g, dg=None):
        return float(np.sum(self.weights * np.asarray(g(self.atoms), dtype=float)))

    def sample(self, rng, size):
        return rng.choice(self.atoms, size=size, p=self.weights)

    def quadrature(self):
        return self.atoms, self.weights


class CdfRateDistribution(RateDistribution):
    """Law specified by its CDF; integrals are done by parts.

    For integrands with a supplied derivative,

        int g dF = g(b) F(b) - g(a) F(a) - int g'(mu) F(mu) dmu,

    which needs nothing but CDF evaluations and is spectrally accurate
    on panels split at the CDF's kinks. Without a derivative a fine
    midpoint Stieltjes rule is used instead (adequate for reporting,
    not for solver-grade tolerances).
    """

    def __init__(self, mu_min: float, mu_max: float, cdf: Callable,
                 kinks: Sequence[float] = (), grid_points: int = 4097,
                 repair: bool = False, repair_limit: float = 1e-2):
        if not 0 < mu_min < mu_max:
            raise ValueError("need 0 < mu_min < mu_max")
        self.mu_min = float(mu_min)
        self.mu_max = float(mu_max)
        self.kinks = tuple(sorted({float(k) for k in kinks if mu_min < k < mu_max}))
        self._cdf = cdf
        base = np.linspace(self.mu_min, self.mu_max, grid_points)
        self._grid = np.unique(np.concatenate([base, np.asarray(self.kinks, dtype=float)]))
        vals = np.asarray(cdf(self._grid), dtype=float)
        repaired = np.maximum.accumulate(np.clip(vals, 0.0, 1.0))
        self.repair_magnitude = float(np.max(repaired - np.clip(vals, 0.0, 1.0)))
        if not repair:
            if np.any(np.diff(vals) < -1e-10):
                raise ValueError("cdf is decreasing somewhere")
            self.repaired = False
        else:
            if self.repair_magnitude > repair_limit:
                raise ValueError(
                    f"cdf needs repair {self.repair_magnitude!r}, beyond the allowed {repair_limit!r}")
            self.repaired = self.repair_magnitude > 0.0
        if abs(repaired[-1] - 1.0) > 1e-8 or repaired[0] > 1e-8:
            raise ValueError("cdf must run from 0 to 1 across the support")
        self._grid_cdf = repaired

    def cdf(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.repaired:
            # the repaired piecewise-linear grid IS the law once repair kicks in
            return np.interp(mu, self._grid, self._grid_cdf, left=0.0, right=1.0)
        return np.clip(np.asarray(self._cdf(mu), dtype=float), 0.0, 1.0)

    def integrate_between(self, g, dg, a, b):
        a = max(a, self.mu_min)
        b = min(b, self.mu_max)
        if b <= a:
            return 0.0
        if dg is None:
            return self._stieltjes(g, a, b)
        ga = float(np.asarray(g(np.array([a]))).reshape(())) if callable(g) else g
        gb = float(np.asarray(g(np.array([b]))).reshape(()))
        Fa = float(self.cdf(np.array([a]))[0]) if a > self.mu_min else 0.0
        Fb = float(self.cdf(np.array([b]))[0]) if b < self.mu_max else 1.0
        x, w = gauss_legendre_panels(a, b, self.kinks)
        inner = float(np.sum(w * np.asarray(dg(x), dtype=float) * self.cdf(x)))
        return gb * Fb - ga * Fa - inner

    def _stieltjes(self, g, a, b):
        mask = (self._grid >= a) & (self._grid <= b)
        xs = self._grid[mask]
        if xs.size < 2:
            xs = np.array([a, b])
        Fv = self.cdf(xs)
        mid = 0.5 * (xs[1:] + xs[:-1])
        return float(np.sum(np.asarray(g(mid), dtype=float) * np.diff(Fv)))

    def sample(self, rng, size):
        u = rng.uniform(0.0, 1.0, size=size)
        return np.interp(u, self._grid_cdf, self._grid)

    def quadrature(self):
        mid = 0.5 * (self._grid[1:] + self._grid[:-1])
        return mid, np.diff(self._grid_cdf)


def uniform_rate_distribution(lo: float, hi: float) -> DensityRateDistribution:
    width = hi - lo
    return DensityRateDistribution(lo, hi, lambda m: np.full_like(np.asarray(m, dtype=float), 1.0 / width))


def point_mass_rate_distribution(mu0: float) -> DiscreteRateDistribution:
    return DiscreteRateDistribution(np.array([mu0]), np.array([1.0]))


@dataclass(frozen=True)
class FairnessMeasure:
    """Share of cumulative idleness per service-rate class.

    Either a discrete measure on ``support``/``weights`` (empirical runs,
    point-mass limits) or a density ``g`` with respect to a rate
    distribution ``base``. ``degenerate`` marks the placeholder measure
    returned before any idleness has accrued (mass at rate 0).
    """

    support: np.ndarray | None = None
    weights: np.ndarray | None = None
    base: RateDistribution | None = None
    g: Callable | None = None
    g_prime: Callable | None = None
    degenerate: bool = False

    def __post_init__(self):
        if self.degenerate:
            return
        if self.support is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
        elif self.base is None or self.g is None:
            raise ValueError("need either (support, weights) or (base, g)")

    @staticmethod
    def from_weights(support: np.ndarray, weights: np.ndarray) -> "FairnessMeasure":
        support = np.asarray(support, dtype=float)
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if total <= 0:
            raise ValueError("no mass")
        return FairnessMeasure(support=support, weights=weights / total)

    @staticmethod
    def point_mass(mu0: float) -> "FairnessMeasure":
        return FairnessMeasure(support=np.array([mu0]), weights=np.array([1.0]))

    @staticmethod
    def from_density(base: RateDistribution, g: Callable,
                     g_prime: Callable | None = None) -> "FairnessMeasure":
        return FairnessMeasure(base=base, g=g, g_prime=g_prime)

    @staticmethod
    def pre_shift() -> "FairnessMeasure":
        """The branch taken while cumulative idleness is still below the shift."""
        return FairnessMeasure(support=np.array([0.0]), weights=np.array([1.0]),
                               degenerate=True)

    def moment(self) -> float:
        """First moment: the idleness-weighted mean service rate."""
        if self.support is not None:
            return float(np.sum(self.support * self.weights))
        g, gp = self.g, self.g_prime
        if gp is None:
            return self.base.integrate(lambda m: m * g(m))
        return self.base.integrate(lambda m: m * g(m), lambda m: g(m) + m * gp(m))

    def bin_masses(self, edges: np.ndarray) -> np.ndarray:
        """Mass per bin (edges ascending; first bin closed on the left)."""
        edges = np.asarray(edges, dtype=float)
        if self.support is not None:
            idx = np.clip(np.searchsorted(edges, self.support, side="right") - 1,
                          0, edges.size - 2)
            out = np.zeros(edges.size - 1)
            np.add.at(out, idx, self.weights)
            return out
        out = np.empty(edges.size - 1)
        for i in range(edges.size - 1):
            out[i] = self.base.integrate_between(self.g, self.g_prime,
                                                 float(edges[i]), float(edges[i + 1]))
        return out

    def tv_binned(self, other: "FairnessMeasure", edges: np.ndarray) -> float:
        """Total-variation distance after binning both measures on ``edges``."""
        return 0.5 * float(np.abs(self.bin_masses(edges) - other.bin_masses(edges)).sum())
