"""Initial data on (r, w, L) phase space and its particle discretization.

Coordinates are radius r, radial momentum w, and squared angular momentum
L.  An initial datum is a non-negative density with compact support in a
box that stays away from r = 0 and L = 0; particles at the origin are not
representable in these coordinates.  The measure carried over from
Cartesian phase space is dz = 4 pi^2 dr dw dL.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    FinenessTooCoarse,
    NegativeDensity,
    NonPositiveRadius,
    TrappedSurfaceAtStart,
)

MEASURE_VOLUME = 4.0 * math.pi**2

# Lower bound on cell measure, as a multiple of fineness^3.  Any positive
# constant works for the convergence analysis; it is fixed per project.
MIN_CELL_MEASURE_FACTOR = 1.0 / 100.0


def energy(r, w, L):
    """Lorentz factor sqrt(1 + w^2 + L/r^2); equals 1 at rest (w=0, L=0)."""
    r = np.asarray(r, dtype=float)
    return np.sqrt(1.0 + np.asarray(w, dtype=float) ** 2 + np.asarray(L, dtype=float) / r**2)


@dataclass(frozen=True)
class SupportBox:
    """Axis-aligned support box [r_min,r_max] x [w_min,w_max] x [l_min,l_max]."""

    r_min: float
    r_max: float
    w_min: float
    w_max: float
    l_min: float
    l_max: float

    def __post_init__(self):
        if not (0.0 < self.r_min < self.r_max):
            raise ValueError("need 0 < r_min < r_max")
        if not (self.w_min < self.w_max):
            raise ValueError("need w_min < w_max")
        if not (0.0 < self.l_min < self.l_max):
            raise ValueError("need 0 < l_min < l_max")

    @property
    def extents(self):
        return (
            self.r_max - self.r_min,
            self.w_max - self.w_min,
            self.l_max - self.l_min,
        )

    @property
    def volume(self):
        er, ew, el = self.extents
        return er * ew * el

    @property
    def bounds(self):
        return (
            (self.r_min, self.r_max),
            (self.w_min, self.w_max),
            (self.l_min, self.l_max),
        )


@dataclass(frozen=True)
class InitialDatum:
    """Evaluable phase-space density with declared support and smoothness.

    ``density`` must accept broadcastable arrays (r, w, L) and return the
    non-negative density, identically zero outside ``support``.
    """

    density: Callable
    support: SupportBox
    smoothness_order: int = 2

    def __post_init__(self):
        if self.smoothness_order < 1:
            raise ValueError("declared smoothness must be at least 1")
        self._check_vanishes_outside()

    def _check_vanishes_outside(self):
        b = self.support
        rc = 0.5 * (b.r_min + b.r_max)
        wc = 0.5 * (b.w_min + b.w_max)
        lc = 0.5 * (b.l_min + b.l_max)
        er, ew, el = b.extents
        probes = [
            (b.r_min - 0.05 * er, wc, lc),
            (max(b.r_min / 2, 1e-12), wc, lc),
            (b.r_max + 0.05 * er, wc, lc),
            (rc, b.w_min - 0.05 * ew, lc),
            (rc, b.w_max + 0.05 * ew, lc),
            (rc, wc, b.l_min / 2),
            (rc, wc, b.l_max + 0.05 * el),
        ]
        for r, w, ll in probes:
            if ll < 0.0 or r <= 0.0:
                continue
            val = float(np.max(np.abs(self.density(np.float64(r), np.float64(w), np.float64(ll)))))
            if val != 0.0:
                raise ValueError(
                    f"density does not vanish outside its declared support "
                    f"(f({r:.4g},{w:.4g},{ll:.4g}) = {val:.4g})"
                )

    def __call__(self, r, w, L):
        return self.density(r, w, L)


def _bump_profile(u):
    # (1 - u^2)^3 on |u| < 1: compact support with two continuous derivatives.
    # A plain squared profile would only be C^1, too rough for the second-order
    # deposition error to show.
    u = np.asarray(u, dtype=float)
    v = 1.0 - u * u
    return np.where(np.abs(u) < 1.0, v * v * v, 0.0)


def bump_datum(support: SupportBox, amplitude: float) -> InitialDatum:
    """C^2 product bump scaled by ``amplitude``, supported exactly on the box."""
    if amplitude < 0.0:
        raise ValueError("amplitude must be non-negative")

    def density(r, w, L):
        ur = (2.0 * np.asarray(r, float) - (support.r_min + support.r_max)) / (
            support.r_max - support.r_min
        )
        uw = (2.0 * np.asarray(w, float) - (support.w_min + support.w_max)) / (
            support.w_max - support.w_min
        )
        ul = (2.0 * np.asarray(L, float) - (support.l_min + support.l_max)) / (
            support.l_max - support.l_min
        )
        return amplitude * _bump_profile(ur) * _bump_profile(uw) * _bump_profile(ul)

    return InitialDatum(density=density, support=support, smoothness_order=2)


# The stock shell used throughout the studies: a compact ingoing shell with
# a weak centrifugal barrier.  Perihelia stay above ~0.35 for the amplitudes
# the harness uses, which keeps every particle radius above the coarsest
# kernel width in the ladders; the momentum and angular-momentum extents
# admit cells as coarse as fineness 0.04.
STANDARD_SUPPORT = SupportBox(
    r_min=0.5,
    r_max=1.1,
    w_min=-0.3125,
    w_max=-0.2875,
    l_min=0.03,
    l_max=0.055,
)


def standard_bump(amplitude: float) -> InitialDatum:
    return bump_datum(STANDARD_SUPPORT, amplitude)


def table_datum(path) -> InitialDatum:
    """Datum from a sampled table (npz with arrays r, w, L, f); trilinear."""
    from scipy.interpolate import RegularGridInterpolator

    with np.load(path) as data:
        r, w, ll, f = data["r"], data["w"], data["L"], data["f"]
    interp = RegularGridInterpolator(
        (r, w, ll), f, method="linear", bounds_error=False, fill_value=0.0
    )
    support = SupportBox(
        r_min=float(r[0]),
        r_max=float(r[-1]),
        w_min=float(w[0]),
        w_max=float(w[-1]),
        l_min=float(ll[0]),
        l_max=float(ll[-1]),
    )

    def density(rr, ww, lll):
        rr, ww, lll = np.broadcast_arrays(
            np.asarray(rr, float), np.asarray(ww, float), np.asarray(lll, float)
        )
        pts = np.stack([rr.ravel(), ww.ravel(), lll.ravel()], axis=-1)
        out = interp(pts).reshape(rr.shape)
        return out if out.ndim else float(out)

    # table values interpolate piecewise-linearly; declared smoothness 1
    return InitialDatum(density=density, support=support, smoothness_order=1)


@dataclass(frozen=True)
class CellDecomposition:
    """Uniform tensor grid over a support box.

    Cells are indexed in C order over (r, w, L); the representative point
    of each cell is its centroid.
    """

    r_edges: np.ndarray
    w_edges: np.ndarray
    l_edges: np.ndarray
    fineness: float

    @property
    def shape(self):
        return (self.r_edges.size - 1, self.w_edges.size - 1, self.l_edges.size - 1)

    @property
    def n_cells(self):
        nr, nw, nl = self.shape
        return nr * nw * nl

    @property
    def spacings(self):
        return (
            float(self.r_edges[1] - self.r_edges[0]),
            float(self.w_edges[1] - self.w_edges[0]),
            float(self.l_edges[1] - self.l_edges[0]),
        )

    @property
    def cell_measure(self):
        hr, hw, hl = self.spacings
        return hr * hw * hl

    @property
    def cell_diameter(self):
        hr, hw, hl = self.spacings
        return math.sqrt(hr * hr + hw * hw + hl * hl)

    def points(self):
        """Centroid coordinates (R, W, L), each of length n_cells."""
        rc = 0.5 * (self.r_edges[:-1] + self.r_edges[1:])
        wc = 0.5 * (self.w_edges[:-1] + self.w_edges[1:])
        lc = 0.5 * (self.l_edges[:-1] + self.l_edges[1:])
        R, W, L = np.meshgrid(rc, wc, lc, indexing="ij")
        return R.ravel(), W.ravel(), L.ravel()

    def cell_bounds(self, i):
        nr, nw, nl = self.shape
        il = i % nl
        iw = (i // nl) % nw
        ir = i // (nl * nw)
        return (
            (self.r_edges[ir], self.r_edges[ir + 1]),
            (self.w_edges[iw], self.w_edges[iw + 1]),
            (self.l_edges[il], self.l_edges[il + 1]),
        )


def decompose(datum: InitialDatum, epsilon: float) -> CellDecomposition:
    """Tile the support box with cells of diameter <= epsilon.

    Per-axis spacing is at most epsilon/sqrt(3), so the box diagonal meets
    the diameter bound; the uniform grid then guarantees the cell-measure
    lower bound as well.
    """
    if not epsilon > 0.0:
        raise ValueError("fineness must be positive")
    h = epsilon / math.sqrt(3.0)
    edges = []
    for lo, hi in datum.support.bounds:
        extent = hi - lo
        if h > extent * (1.0 + 1e-9):
            raise FinenessTooCoarse(
                f"fineness {epsilon:.6g} needs axis spacing {h:.6g} "
                f"but the axis extent is only {extent:.6g}"
            )
        n = max(1, int(math.ceil(extent / h * (1.0 - 1e-12))))
        edges.append(np.linspace(lo, hi, n + 1))
    decomp = CellDecomposition(edges[0], edges[1], edges[2], float(epsilon))
    if decomp.cell_measure < MIN_CELL_MEASURE_FACTOR * epsilon**3:
        raise FinenessTooCoarse(
            f"cell measure {decomp.cell_measure:.6g} below "
            f"{MIN_CELL_MEASURE_FACTOR:.6g} * fineness^3"
        )
    return decomp


@dataclass(frozen=True)
class ParticleEnsemble:
    """Radius, radial momentum, squared angular momentum, weight per particle.

    Immutable: arrays are read-only once constructed and L is shared, not
    copied, across time steps; it is conserved exactly, so updated states
    reference the same buffer.
    """

    R: np.ndarray
    W: np.ndarray
    L: np.ndarray
    M: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        arrays = {}
        for name in ("R", "W", "L", "M"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 1:
                raise ValueError(f"{name} must be one-dimensional")
            if not a.flags.writeable:
                arrays[name] = a  # already frozen, share it
            else:
                a = a.copy()
                a.flags.writeable = False
                arrays[name] = a
        n = arrays["R"].size
        if any(arrays[k].size != n for k in ("W", "L", "M")):
            raise ValueError("particle arrays must share one length")
        if n and not np.all(arrays["R"] > 0.0):
            raise NonPositiveRadius("all particle radii must be positive")
        if n and np.any(arrays["L"] < 0.0):
            raise ValueError("squared angular momenta must be non-negative")
        if n and np.any(arrays["M"] < 0.0):
            raise ValueError("weights must be non-negative")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.R.size

    @property
    def energies(self):
        return energy(self.R, self.W, self.L)

    def replace(self, R=None, W=None, M=None, time=None) -> "ParticleEnsemble":
        """New ensemble with updated arrays; L is shared bit-for-bit."""
        return ParticleEnsemble(
            R=self.R if R is None else R,
            W=self.W if W is None else W,
            L=self.L,
            M=self.M if M is None else M,
            time=self.time if time is None else float(time),
        )


def _gauss_nodes(order):
    if order < 1:
        raise ValueError("quadrature order must be at least 1")
    return np.polynomial.legendre.leggauss(order)


def _axis_rule(edges, order, rule):
    """Per-cell nodes (n, q) and weights (n, q) along one axis."""
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    if rule == "midpoint":
        return mid[:, None], (2.0 * half)[:, None]
    x, w = _gauss_nodes(order)
    return mid[:, None] + half[:, None] * x[None, :], half[:, None] * w[None, :]


def init_weights(
    datum: InitialDatum,
    decomp: CellDecomposition,
    quad_order: int = 4,
    rule: str = "gauss",
) -> ParticleEnsemble:
    """Particles at cell centroids carrying the integral of the datum.

    Weights are 4 pi^2 times the tensor Gauss-Legendre integral of the
    density over each cell ("midpoint" is available for speed checks).
    Exact for densities constant per cell at any order.
    """
    if rule not in ("gauss", "midpoint"):
        raise ValueError(f"unknown quadrature rule {rule!r}")
    rn, rw = _axis_rule(decomp.r_edges, quad_order, rule)
    wn, ww = _axis_rule(decomp.w_edges, quad_order, rule)
    ln, lw = _axis_rule(decomp.l_edges, quad_order, rule)
    nr, q = rn.shape
    nw = wn.shape[0]
    nl = ln.shape[0]

    weights = np.empty((nr, nw, nl))
    # chunk the r axis so the node grid stays within ~2e7 entries
    chunk = max(1, int(2e7 // max(1, q**3 * nw * nl)))
    for a in range(0, nr, chunk):
        b = min(nr, a + chunk)
        vals = datum(
            rn[a:b, :, None, None, None, None],
            wn[None, None, :, :, None, None],
            ln[None, None, None, None, :, :],
        )
        vals = np.broadcast_to(
            vals, (b - a, rn.shape[1], nw, wn.shape[1], nl, ln.shape[1])
        )
        if np.any(vals < 0.0):
            raise NegativeDensity("density is negative inside its support")
        weights[a:b] = np.einsum(
            "aibjck,ai,bj,ck->abc", vals, rw[a:b], ww, lw, optimize=True
        )
    R, W, L = decomp.points()
    return ParticleEnsemble(R=R, W=W, L=L, M=MEASURE_VOLUME * weights.ravel(), time=0.0)


def continuum_sources_initial(datum: InitialDatum, r, quad_order: int = 48):
    """Source terms (rho, p, j) of the smooth initial datum at radius r.

    Direct Gauss-Legendre quadrature of pi/r^2 times the (w, L) moments
    {E, w^2/E, w} of the density; used to validate the t=0 deposition.
    """
    b = datum.support
    wn, wwts = _gauss_nodes(quad_order)
    w_nodes = 0.5 * (b.w_min + b.w_max) + 0.5 * (b.w_max - b.w_min) * wn
    w_wts = 0.5 * (b.w_max - b.w_min) * wwts
    l_nodes = 0.5 * (b.l_min + b.l_max) + 0.5 * (b.l_max - b.l_min) * wn
    l_wts = 0.5 * (b.l_max - b.l_min) * wwts

    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r_arr <= 0.0):
        raise ValueError("source evaluation needs r > 0")
    f = datum(r_arr[:, None, None], w_nodes[None, :, None], l_nodes[None, None, :])
    f = np.broadcast_to(f, (r_arr.size, quad_order, quad_order))
    E = energy(r_arr[:, None, None], w_nodes[None, :, None], l_nodes[None, None, :])
    wl = w_wts[:, None] * l_wts[None, :]
    pref = math.pi / r_arr**2
    rho = pref * np.einsum("rwl,wl->r", f * E, wl)
    p = pref * np.einsum("rwl,wl->r", f * (w_nodes[None, :, None] ** 2 / E), wl)
    j = pref * np.einsum("rwl,wl->r", f * w_nodes[None, :, None], wl)
    if np.ndim(r) == 0:
        return float(rho[0]), float(p[0]), float(j[0])
    return rho, p, j


@dataclass
class ValidationReport:
    """Margins of the two no-trapped-surface conditions on a radial grid."""

    radii: np.ndarray
    number_enclosed: np.ndarray
    energy_enclosed: np.ndarray
    passed: bool = True

    @property
    def number_margin(self):
        return self.radii / 2.0 - self.number_enclosed

    @property
    def energy_margin(self):
        return self.radii / 2.0 - self.energy_enclosed

    @property
    def min_number_margin(self):
        return float(np.min(self.number_margin))

    @property
    def min_energy_margin(self):
        return float(np.min(self.energy_margin))


def _enclosed_integrals(datum, radii, slab_order=8, moment_order=32):
    """Cumulative number and energy integrals 4 pi^2 int_0^r of {f, E f}."""
    b = datum.support
    wn, wwts = _gauss_nodes(moment_order)
    w_nodes = 0.5 * (b.w_min + b.w_max) + 0.5 * (b.w_max - b.w_min) * wn
    w_wts = 0.5 * (b.w_max - b.w_min) * wwts
    l_nodes = 0.5 * (b.l_min + b.l_max) + 0.5 * (b.l_max - b.l_min) * wn
    l_wts = 0.5 * (b.l_max - b.l_min) * wwts
    wl = w_wts[:, None] * l_wts[None, :]

    sn, swts = _gauss_nodes(slab_order)
    number = np.zeros(radii.size)
    eng = np.zeros(radii.size)
    num_acc = 0.0
    eng_acc = 0.0
    prev = 0.0
    for k, rk in enumerate(radii):
        a, c = max(prev, b.r_min), min(rk, b.r_max)
        if c > a:
            s = 0.5 * (a + c) + 0.5 * (c - a) * sn
            ws = 0.5 * (c - a) * swts
            f = datum(s[:, None, None], w_nodes[None, :, None], l_nodes[None, None, :])
            f = np.broadcast_to(f, (slab_order, moment_order, moment_order))
            E = energy(s[:, None, None], w_nodes[None, :, None], l_nodes[None, None, :])
            num_acc += float(np.einsum("s,swl,wl->", ws, f, wl))
            eng_acc += float(np.einsum("s,swl,wl->", ws, f * E, wl))
        number[k] = MEASURE_VOLUME * num_acc
        eng[k] = MEASURE_VOLUME * eng_acc
        prev = rk
    return number, eng


def validate_initial(datum: InitialDatum, n_radii: int = 256) -> ValidationReport:
    """Check the no-trapped-surface conditions of the initial datum.

    Two conditions are checked on a dense radial grid: the number-density
    condition, enclosed particle number < r/2, and the operational one,
    enclosed energy (t=0 mass function) < r/2, which is what metric
    regularity actually needs.  Both margins are reported; either failing
    raises.  The integrals saturate above the support, where the margins
    only grow, so the grid stops at r_max.
    """
    b = datum.support
    radii = np.concatenate(
        [np.linspace(b.r_min / 4, b.r_min, 8, endpoint=False), np.linspace(b.r_min, b.r_max, n_radii)]
    )
    number, eng = _enclosed_integrals(datum, radii)
    report = ValidationReport(radii=radii, number_enclosed=number, energy_enclosed=eng)
    for which, margin, enclosed in (
        ("number", report.number_margin, number),
        ("energy", report.energy_margin, eng),
    ):
        k = int(np.argmin(margin))
        if margin[k] <= 0.0:
            raise TrappedSurfaceAtStart(float(radii[k]), float(enclosed[k]), which)
    return report


def initial_adm_mass(datum: InitialDatum, moment_order: int = 32) -> float:
    """Total t=0 mass of the datum, 4 pi^2 times the energy moment."""
    radii = np.array([datum.support.r_max])
    _, eng = _enclosed_integrals(datum, radii, moment_order=moment_order)
    return float(eng[0])
