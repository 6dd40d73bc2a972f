"""Dispersal kernels.

A :class:`Kernel` is an immutable, unit-mass probability density ``J`` on the
real line. Five analytic presets are provided together with tabulated
densities, the reflection ``z -> J(-z)`` and the smooth truncations
``J_N(z) = J(z) * zeta(z / N)`` used to approximate fat-tailed kernels by
compactly supported ones.

Unbounded presets (``gaussian``, ``fat_quartic``) are restricted to a declared
sampling window ``[-r, r]`` and renormalized there; all closed forms below are
the exact values for the windowed, renormalized density.

Quadrature is composite trapezoid on uniform abscissae throughout, with sums
taken by :func:`math.fsum` so results do not depend on summation order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf, ndtr

from .errors import TransformDivergent, ValidationError

PRESETS = ("uniform", "tent", "truncated_cosine", "gaussian", "fat_quartic")
UNBOUNDED = ("gaussian", "fat_quartic")

#: Tail mass allowed outside the sampling window of an unbounded preset.
DEFAULT_TAIL_TOL = 1e-6

_SQRT2 = math.sqrt(2.0)
_QUAD_SPACING = 0.005
_QUAD_MIN_NODES = 20001


def cutoff(t):
    """Smooth even bump: 1 on ``|t| <= 1``, 0 on ``|t| >= 2``.

    On the transition band the profile is ``exp(1 - 1/(1 - (|t| - 1)**2))``,
    which is C-infinity and nonincreasing in ``|t|``.
    """
    t = np.abs(np.asarray(t, dtype=float))
    out = np.zeros_like(t)
    out[t <= 1.0] = 1.0
    band = (t > 1.0) & (t < 2.0)
    s = t[band] - 1.0
    out[band] = np.exp(1.0 - 1.0 / (1.0 - s * s))
    return out


def _quartic_antiderivatives(rho):
    """Integrals of t**k / (1 + t**4) over [0, rho] for k = 0, 1, 2."""
    a = 2.0 * math.atan(_SQRT2 * rho + 1.0) + 2.0 * math.atan(_SQRT2 * rho - 1.0)
    lg = math.log((rho * rho + _SQRT2 * rho + 1.0) / (rho * rho - _SQRT2 * rho + 1.0))
    i0 = (lg + a) / (4.0 * _SQRT2)
    i1 = 0.5 * math.atan(rho * rho)
    i2 = (-lg + a) / (4.0 * _SQRT2)
    return i0, i1, i2


@dataclass(frozen=True, eq=False)
class Kernel:
    """Unit-mass dispersal kernel.

    Use :func:`make_kernel`, :func:`truncate` and :func:`reflect` to build
    instances rather than calling the constructor directly.

    Attributes
    ----------
    kind : str
        One of the preset names, ``"tabulated"`` or ``"truncated"``.
    params : dict
        Preset parameters (``radius``, ``sigma``, ``scale``,
        ``sampling_radius``) or, for truncations, ``{"N": N}``.
    abscissae, densities : ndarray or None
        Table for tabulated kernels, densities normalized to unit mass.
    base : Kernel or None
        Untruncated kernel for ``kind == "truncated"``.
    """

    kind: str
    params: dict
    abscissae: np.ndarray | None = None
    densities: np.ndarray | None = None
    base: Kernel | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        if self.kind != other.kind or self.params != other.params:
            return False
        if self.kind == "tabulated":
            return np.array_equal(self.abscissae, other.abscissae) and np.array_equal(
                self.densities, other.densities
            )
        return self.base == other.base

    __hash__ = None

    # -- geometry -------------------------------------------------------

    @property
    def bounded(self):
        if self.kind == "truncated":
            return True
        return self.kind not in UNBOUNDED

    @property
    def support_radius(self):
        """Radius of the support, ``math.inf`` for unbounded presets."""
        if self.kind in UNBOUNDED:
            return math.inf
        return self.reach

    @property
    def reach(self):
        """Finite radius used for discretization and quadrature."""
        p = self.params
        if self.kind in ("uniform", "tent", "truncated_cosine"):
            return p["radius"]
        if self.kind in UNBOUNDED:
            return p["sampling_radius"]
        if self.kind == "tabulated":
            return float(max(-self.abscissae[0], self.abscissae[-1]))
        return min(self.base.reach, 2.0 * p["N"])

    @property
    def symmetric(self):
        if self.kind in PRESETS:
            return True
        if self.kind == "truncated":
            return self.base.symmetric
        return np.array_equal(self.abscissae, -self.abscissae[::-1]) and np.array_equal(
            self.densities, self.densities[::-1]
        )

    @property
    def mass(self):
        """Total mass: 1 for every kernel except truncations."""
        if self.kind != "truncated":
            return 1.0
        if "mass" not in self._cache:
            self._cache["mass"] = _trapezoid(self, lambda z: np.ones_like(z))
        return self._cache["mass"]

    # -- evaluation -----------------------------------------------------

    def density(self, z):
        """Evaluate ``J`` at ``z`` (vectorized)."""
        z = np.asarray(z, dtype=float)
        p = self.params
        k = self.kind
        if k == "uniform":
            r = p["radius"]
            return np.where(np.abs(z) <= r, 0.5 / r, 0.0)
        if k == "tent":
            r = p["radius"]
            return np.clip(1.0 - np.abs(z) / r, 0.0, None) / r
        if k == "truncated_cosine":
            r = p["radius"]
            inside = np.abs(z) <= r
            return np.where(inside, (1.0 + np.cos(np.pi * z / r)) / (2.0 * r), 0.0)
        if k == "gaussian":
            s, r = p["sigma"], p["sampling_radius"]
            norm = s * math.sqrt(2.0 * math.pi) * erf(r / (s * _SQRT2))
            return np.where(np.abs(z) <= r, np.exp(-0.5 * (z / s) ** 2) / norm, 0.0)
        if k == "fat_quartic":
            s, r = p["scale"], p["sampling_radius"]
            norm = s * 2.0 * _quartic_antiderivatives(r / s)[0]
            return np.where(np.abs(z) <= r, 1.0 / (norm * (1.0 + (z / s) ** 4)), 0.0)
        if k == "tabulated":
            return np.interp(z, self.abscissae, self.densities, left=0.0, right=0.0)
        return self.base.density(z) * cutoff(z / p["N"])

    def weights(self, h):
        """Discrete convolution weights on a grid of spacing ``h``.

        Returns ``(K, w)`` with ``w[K + k]`` the weight of offset ``k`` so
        that ``sum_j w[K + i - j] u_j`` approximates ``int J(x_i - y) u(y) dy``.
        Weights are trapezoid samples ``h J(k h)`` renormalized to sum to 1;
        for a truncation they are the base weights times ``zeta(k h / N)``,
        which keeps ``J_N <= J`` and the monotonicity in ``N`` exact.
        """
        key = ("weights", float(h))
        if key in self._cache:
            return self._cache[key]
        if h <= 0:
            raise ValidationError("kernel.weights", f"grid spacing must be positive, got {h}")
        if self.kind == "truncated":
            kb, wb = self.base.weights(h)
            offsets = np.arange(-kb, kb + 1) * h
            w = wb * cutoff(offsets / self.params["N"])
            nz = np.nonzero(w)[0]
            m = max(kb - nz[0], nz[-1] - kb) if nz.size else 0
            out = (int(m), w[kb - m : kb + m + 1].copy())
        else:
            if self.kind == "tabulated":
                lo, hi = float(self.abscissae[0]), float(self.abscissae[-1])
            else:
                lo, hi = -self.reach, self.reach
            klo = math.ceil(lo / h - 1e-9)
            khi = math.floor(hi / h + 1e-9)
            ks = np.arange(klo, khi + 1)
            vals = self.density(ks * h)
            # trapezoid end weights where a node sits on the support edge
            if abs(klo * h - lo) <= 1e-9 * h:
                vals[0] *= 0.5
            if abs(khi * h - hi) <= 1e-9 * h:
                vals[-1] *= 0.5
            total = math.fsum(vals)
            if total <= 0:
                raise ValidationError(
                    "kernel.weights", f"kernel has no mass on the grid of spacing {h}"
                )
            kmax = int(max(-klo, khi))
            w = np.zeros(2 * kmax + 1)
            w[ks + kmax] = vals / total
            out = (kmax, w)
        out[1].setflags(write=False)
        self._cache[key] = out
        return out


# -- construction -------------------------------------------------------


def make_kernel(spec=None, *, tail_tol=DEFAULT_TAIL_TOL, **params):
    """Build a kernel from a preset name or a tabulated profile.

    Parameters
    ----------
    spec : str or dict
        Preset name, or a dict with either a ``"preset"`` entry plus its
        parameters, or ``"abscissae"`` and ``"densities"`` arrays.
    tail_tol : float
        Maximum mass allowed outside the sampling window of an unbounded
        preset.
    **params
        Preset parameters when ``spec`` is a string.

    Examples
    --------
    >>> make_kernel("uniform", radius=1.0).density(0.5)
    array(0.5)
    """
    if isinstance(spec, dict):
        params = {**spec, **params}
        spec = params.pop("preset", None)
    if spec is None or spec == "tabulated":
        if "abscissae" not in params or "densities" not in params:
            raise ValidationError("kernel.make_kernel", "need a preset name or abscissae/densities")
        return _make_tabulated(params["abscissae"], params["densities"])
    if spec not in PRESETS:
        raise ValidationError("kernel.make_kernel", f"unknown preset {spec!r}")

    required = {
        "uniform": ("radius",),
        "tent": ("radius",),
        "truncated_cosine": ("radius",),
        "gaussian": ("sigma", "sampling_radius"),
        "fat_quartic": ("scale", "sampling_radius"),
    }[spec]
    clean = {}
    for name in required:
        if name not in params or params[name] is None:
            raise ValidationError("kernel.make_kernel", f"{spec} needs parameter {name!r}")
        value = float(params[name])
        if not value > 0 or not math.isfinite(value):
            raise ValidationError("kernel.make_kernel", f"{name} must be positive, got {value}")
        clean[name] = value

    if spec == "gaussian":
        tail = math.erfc(clean["sampling_radius"] / (clean["sigma"] * _SQRT2))
    elif spec == "fat_quartic":
        rho = clean["sampling_radius"] / clean["scale"]
        tail = 1.0 - 2.0 * _quartic_antiderivatives(rho)[0] / (math.pi / _SQRT2)
    else:
        tail = 0.0
    if tail > tail_tol:
        raise ValidationError(
            "kernel.make_kernel",
            f"tail mass {tail:.3e} outside sampling_radius exceeds {tail_tol:.1e}",
        )
    return Kernel(spec, clean)


def _make_tabulated(abscissae, densities):
    xs = np.array(abscissae, dtype=float)
    ds = np.array(densities, dtype=float)
    where = "kernel.make_kernel"
    if xs.ndim != 1 or xs.shape != ds.shape or xs.size < 2:
        raise ValidationError(where, "abscissae and densities must be 1-D of equal length >= 2")
    if not np.all(np.diff(xs) > 0):
        raise ValidationError(where, "abscissae must be strictly increasing")
    if np.any(ds < 0):
        i = int(np.argmin(ds))
        raise ValidationError(where, f"negative density sample {ds[i]} at z={xs[i]}")
    if not (xs[0] <= 0.0 <= xs[-1]) or np.interp(0.0, xs, ds) <= 0:
        raise ValidationError(where, "density at 0 must be strictly positive")
    dz = np.diff(xs)
    mass = math.fsum(0.5 * dz * (ds[:-1] + ds[1:]))
    if mass <= 0:
        raise ValidationError(where, "zero mass")
    ds = ds / mass
    xs.setflags(write=False)
    ds.setflags(write=False)
    return Kernel("tabulated", {}, abscissae=xs, densities=ds)


def truncate(kernel, N):
    """Return ``J_N(z) = J(z) zeta(z / N)``, not renormalized."""
    N = float(N)
    if not N > 0:
        raise ValidationError("kernel.truncate", f"N must be positive, got {N}")
    if kernel.kind == "truncated":
        raise ValidationError("kernel.truncate", "kernel is already truncated")
    return Kernel("truncated", {"N": N}, base=kernel)


def reflect(kernel):
    """Return the kernel ``z -> J(-z)``."""
    if kernel.kind in PRESETS:
        return kernel
    if kernel.kind == "truncated":
        return Kernel("truncated", dict(kernel.params), base=reflect(kernel.base))
    xs = -kernel.abscissae[::-1]
    ds = kernel.densities[::-1].copy()
    xs.setflags(write=False)
    ds.setflags(write=False)
    return Kernel("tabulated", {}, abscissae=xs, densities=ds)


# -- moments ------------------------------------------------------------


def _quadrature_nodes(kernel):
    if kernel.kind == "tabulated":
        return kernel.abscissae
    r = kernel.reach
    m = max(_QUAD_MIN_NODES, 2 * math.ceil(r / _QUAD_SPACING) + 1)
    return np.linspace(-r, r, m)


def _trapezoid(kernel, weight_fn, half_line=False):
    z = _quadrature_nodes(kernel)
    if half_line:
        z = z[z >= 0.0]
        if z[0] > 0.0:
            z = np.concatenate(([0.0], z))
    vals = kernel.density(z) * weight_fn(z)
    dz = np.diff(z)
    return math.fsum(0.5 * dz * (vals[:-1] + vals[1:]))


def moment(kernel, order, half_line=False, method="auto"):
    """``int J(z) z**order dz`` over the real line or over ``z > 0``.

    ``method`` is ``"analytic"``, ``"quadrature"`` or ``"auto"`` (closed form
    when one exists).
    """
    if order not in (0, 1, 2):
        raise ValidationError("kernel.moment", f"order must be 0, 1 or 2, got {order}")
    if method not in ("auto", "analytic", "quadrature"):
        raise ValidationError("kernel.moment", f"unknown method {method!r}")
    if method != "quadrature" and kernel.kind in PRESETS:
        return _analytic_moment(kernel, order, half_line)
    if method == "analytic":
        raise ValidationError("kernel.moment", f"no closed form for {kernel.kind} kernels")
    return _trapezoid(kernel, lambda z: z**order, half_line)


def _analytic_moment(kernel, order, half_line):
    p = kernel.params
    k = kernel.kind
    if not half_line:
        if order == 0:
            return 1.0
        if order == 1:
            return 0.0
        return 2.0 * _analytic_moment(kernel, 2, True)
    if order == 0:
        return 0.5
    if k == "uniform":
        r = p["radius"]
        return r / 4.0 if order == 1 else r * r / 6.0
    if k == "tent":
        r = p["radius"]
        return r / 6.0 if order == 1 else r * r / 12.0
    if k == "truncated_cosine":
        r = p["radius"]
        if order == 1:
            return r / 4.0 - r / math.pi**2
        return r * r * (1.0 / 6.0 - 1.0 / math.pi**2)
    if k == "gaussian":
        s, r = p["sigma"], p["sampling_radius"]
        rho = r / s
        z = erf(rho / _SQRT2)
        g = math.exp(-0.5 * rho * rho)
        if order == 1:
            return s / math.sqrt(2.0 * math.pi) * (1.0 - g) / z
        return 0.5 * s * s * (z - math.sqrt(2.0 / math.pi) * rho * g) / z
    s, r = p["scale"], p["sampling_radius"]
    i0, i1, i2 = _quartic_antiderivatives(r / s)
    return s * i1 / (2.0 * i0) if order == 1 else s * s * i2 / (2.0 * i0)


def exponential_moment(kernel, alpha, orientation="+", method="auto"):
    """``int J(z) exp(alpha z) dz`` (``"+"``) or ``int J(-z) exp(alpha z) dz`` (``"-"``)."""
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha < 0:
        raise ValidationError("kernel.exponential_moment", f"alpha must be finite and >= 0, got {alpha}")
    if orientation not in ("+", "-"):
        raise ValidationError("kernel.exponential_moment", f"orientation must be '+' or '-'")
    if alpha == 0.0:
        return kernel.mass
    if kernel.kind == "fat_quartic":
        raise TransformDivergent(
            "kernel.exponential_moment",
            "transform-divergent: fat-tailed kernel has no exponential moment for alpha > 0",
        )
    if method != "quadrature" and kernel.kind in PRESETS:
        return _analytic_exponential(kernel, alpha)
    if method == "analytic":
        raise ValidationError("kernel.exponential_moment", f"no closed form for {kernel.kind} kernels")
    sign = 1.0 if orientation == "+" else -1.0
    return _trapezoid(kernel, lambda z: np.exp(sign * alpha * z))


def _analytic_exponential(kernel, alpha):
    # every preset is even, so both orientations agree
    p = kernel.params
    k = kernel.kind
    if k == "uniform":
        x = alpha * p["radius"]
        return math.sinh(x) / x
    if k == "tent":
        x = alpha * p["radius"]
        return 2.0 * (math.cosh(x) - 1.0) / (x * x)
    if k == "truncated_cosine":
        r = p["radius"]
        x = alpha * r
        w2 = (math.pi / r) ** 2
        return math.sinh(x) / x * w2 / (alpha * alpha + w2)
    s, r = p["sigma"], p["sampling_radius"]
    shift = alpha * s * s
    num = ndtr((r - shift) / s) - ndtr((-r - shift) / s)
    return math.exp(0.5 * shift * alpha) * num / erf(r / (s * _SQRT2))


# -- CSV ----------------------------------------------------------------


def load_tabulated_csv(path):
    """Read a two-column ``z,j`` CSV and build a tabulated kernel."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["z", "j"]:
            raise ValidationError("kernel.load_tabulated_csv", f"{path}: expected header 'z,j'")
        rows = [(float(a), float(b)) for a, b in reader]
    xs, ds = zip(*rows) if rows else ((), ())
    return make_kernel({"abscissae": xs, "densities": ds})


def save_tabulated_csv(kernel, path, h=None):
    """Write the kernel as a ``z,j`` table (its own table, or samples at spacing ``h``)."""
    if kernel.kind == "tabulated":
        xs, ds = kernel.abscissae, kernel.densities
    else:
        h = h or kernel.reach / 1000.0
        m = math.floor(kernel.reach / h)
        xs = np.arange(-m, m + 1) * h
        ds = kernel.density(xs)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        fh.write("z,j\n")
        for a, b in zip(xs, ds):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
