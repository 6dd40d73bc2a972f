"""KPP growth laws with a bounded ecological niche.

A growth model provides ``f(x, s)``, its derivative in ``s`` and the
linearization ``a(x) = d_s f(x, 0)``. Niche profiles are built from cubic
smoothsteps so ``a`` is Lipschitz by construction, and each profile knows its
constant tail values so that suprema and tail bounds can be taken exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import NoTailBound, ValidationError

LADDER_SIZE = 64


def smoothstep(t):
    """Cubic ``3t^2 - 2t^3`` on [0, 1], clamped to 0 and 1 outside."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


# -- profiles -----------------------------------------------------------


@dataclass(frozen=True)
class NicheProfile:
    """Plateau ``inner`` on ``[-left, right]`` ramping to constant tails.

    The ramps are cubic smoothsteps of widths ``ramp_left`` and
    ``ramp_right``; beyond ``-left - ramp_left`` the profile equals
    ``outer_left`` and beyond ``right + ramp_right`` it equals
    ``outer_right``.
    """

    inner: float = 1.0
    outer_left: float = -1.0
    outer_right: float = -1.0
    left: float = 2.0
    right: float = 2.0
    ramp_left: float = 1.0
    ramp_right: float = 1.0

    def __post_init__(self):
        if self.ramp_left <= 0 or self.ramp_right <= 0:
            raise ValidationError("environment.NicheProfile", "ramp widths must be positive")
        if self.left + self.right < 0:
            raise ValidationError("environment.NicheProfile", "niche interval is empty")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.inner)
        right = x > self.right
        t = smoothstep((x[right] - self.right) / self.ramp_right)
        out[right] = self.inner + (self.outer_right - self.inner) * t
        left = x < -self.left
        t = smoothstep((-self.left - x[left]) / self.ramp_left)
        out[left] = self.inner + (self.outer_left - self.inner) * t
        return out

    @property
    def tails(self):
        return self.outer_left, self.outer_right

    @property
    def extent(self):
        return max(self.left + self.ramp_left, self.right + self.ramp_right)

    @property
    def niche_interval(self):
        return -self.left, self.right


def niche_profile(inner=1.0, outer=-1.0, half_width=2.0, ramp=1.0):
    """Symmetric :class:`NicheProfile`."""
    return NicheProfile(inner, outer, outer, half_width, half_width, ramp, ramp)


@dataclass(frozen=True)
class ConstantProfile:
    value: float

    def __call__(self, x):
        return np.full(np.shape(x), float(self.value))

    @property
    def tails(self):
        return self.value, self.value

    @property
    def extent(self):
        return 0.0

    @property
    def niche_interval(self):
        return -math.inf, math.inf


@dataclass(frozen=True)
class OffsetProfile:
    """``base(x) + offset``."""

    base: object
    offset: float

    def __call__(self, x):
        return self.base(x) + self.offset

    @property
    def tails(self):
        return tuple(t + self.offset for t in self.base.tails)

    @property
    def extent(self):
        return self.base.extent

    @property
    def niche_interval(self):
        return self.base.niche_interval


class TabulatedProfile:
    """Cubic interpolation of ``(x, a)`` samples with declared constant tails."""

    def __init__(self, xs, values, tail_left, tail_right):
        xs = np.asarray(xs, dtype=float)
        values = np.asarray(values, dtype=float)
        if xs.ndim != 1 or xs.shape != values.shape or xs.size < 4:
            raise ValidationError("environment.TabulatedProfile", "need at least 4 (x, a) samples")
        if not np.all(np.diff(xs) > 0):
            raise ValidationError("environment.TabulatedProfile", "x must be strictly increasing")
        self.xs = xs
        self.values = values
        self._spline = CubicSpline(xs, values)
        self._tails = (float(tail_left), float(tail_right))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self._spline(np.clip(x, self.xs[0], self.xs[-1])), dtype=float)
        out = np.where(x < self.xs[0], self._tails[0], out)
        return np.where(x > self.xs[-1], self._tails[1], out)

    @property
    def tails(self):
        return self._tails

    @property
    def extent(self):
        return float(max(-self.xs[0], self.xs[-1]))

    @property
    def niche_interval(self):
        inside = self.xs[self.values > 0]
        if inside.size == 0:
            return 0.0, 0.0
        return float(inside[0]), float(inside[-1])

    @classmethod
    def from_csv(cls, path, tail_left, tail_right):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            if header != ["x", "a"]:
                raise ValidationError("environment.TabulatedProfile", f"{path}: expected header 'x,a'")
            rows = [(float(p), float(q)) for p, q in reader]
        xs, vals = zip(*rows)
        return cls(xs, vals, tail_left, tail_right)


def sample_radii(profile, resolution=None):
    """Nonnegative radii covering the profile's variable part, extent included."""
    ext = profile.extent
    lo, hi = profile.niche_interval
    width = hi - lo if math.isfinite(hi - lo) and hi > lo else 1.0
    step = resolution or 1e-3 * width
    m = max(2, math.ceil(ext / step) + 1) if ext > 0 else 2
    radii = np.linspace(0.0, ext, m) if ext > 0 else np.array([0.0])
    return np.concatenate((radii, ext + np.array([0.5, 1.0])))


def profile_sup(profile):
    """``sup_x a(x)`` by dense scan plus the analytic tail values."""
    r = sample_radii(profile)
    x = np.concatenate((-r[::-1], r))
    return float(max(np.max(profile(x)), *profile.tails))


def as_profile(a):
    """Accept a profile, a growth model or a constant and return a profile."""
    if isinstance(a, GrowthModel):
        return a.profile
    if isinstance(a, (int, float)):
        return ConstantProfile(float(a))
    return a


# -- growth models ------------------------------------------------------


class GrowthModel:
    """Base class. Subclasses set ``profile`` and ``saturation`` and define
    ``f`` and ``dfds``."""

    profile = None
    saturation = 0.0

    def f(self, x, s):
        raise NotImplementedError

    def dfds(self, x, s):
        raise NotImplementedError

    def a(self, x):
        """Linearization ``d_s f(x, 0)``."""
        return self.profile(x)

    def S(self, x):
        """Saturation level: a constant super-solution."""
        return np.full(np.shape(x), self.saturation)

    @property
    def sup_a(self):
        return profile_sup(self.profile)

    @property
    def tails(self):
        return self.profile.tails

    def verification_x(self):
        r = sample_radii(self.profile)
        return np.concatenate((-r[::-1], r[1:]))

    def lipschitz(self, s_max=None):
        """``sup |d_s f|`` over the sample and ``s`` in ``[0, s_max]``."""
        s_max = self.saturation if s_max is None else s_max
        x = self.verification_x()
        s = np.linspace(0.0, s_max, 9)
        return float(max(np.max(np.abs(self.dfds(x, si))) for si in s))

    def sup_abs_f(self, s_max=None):
        s_max = self.saturation if s_max is None else s_max
        x = self.verification_x()
        s = np.linspace(0.0, s_max, LADDER_SIZE)
        return float(max(np.max(np.abs(self.f(x, si))) for si in s))


class Logistic(GrowthModel):
    """``f(x, s) = s (a(x) - b(x) s)``."""

    def __init__(self, a_profile, b=1.0):
        self.profile = as_profile(a_profile)
        self.b = b
        x = self.verification_x()
        bx = self._b(x)
        if np.any(bx <= 0):
            i = int(np.argmin(bx))
            raise ValidationError(
                "environment.make_growth", f"b must be positive (b={bx[i]} at x={x[i]}): no saturation"
            )
        tails_b = self._b(np.array([-1e12, 1e12]))
        ratio = np.concatenate((np.maximum(self.a(x), 0.0) / bx, np.maximum(self.tails, 0.0) / tails_b))
        self.saturation = float(np.max(ratio))

    def _b(self, x):
        if callable(self.b):
            return np.asarray(self.b(x), dtype=float)
        return np.full(np.shape(x), float(self.b))

    def f(self, x, s):
        return s * (self.profile(x) - self._b(x) * s)

    def dfds(self, x, s):
        return self.profile(x) - 2.0 * self._b(x) * s


@dataclass(frozen=True)
class _PlateauProfile:
    a: float
    q: float
    L: float
    L0: float

    def weight(self, x):
        return 1.0 - smoothstep((np.abs(np.asarray(x, dtype=float)) - self.L) / self.L0)

    def __call__(self, x):
        return -self.q + (self.a + self.q) * self.weight(x)

    @property
    def tails(self):
        return -self.q, -self.q

    @property
    def extent(self):
        return self.L + self.L0

    @property
    def niche_interval(self):
        return -self.L, self.L


class Plateau(GrowthModel):
    """Piecewise law: logistic ``s(a - s)`` on ``|x| <= L``, ``-q s`` on
    ``|x| >= L + L0``, blended by a smooth cutoff in between."""

    def __init__(self, a, q, L, L0):
        for name, v in (("a", a), ("q", q), ("L", L), ("L0", L0)):
            if not v > 0:
                raise ValidationError("environment.make_growth", f"plateau parameter {name} must be positive")
        self.profile = _PlateauProfile(float(a), float(q), float(L), float(L0))
        self.saturation = float(a)

    def f(self, x, s):
        p = self.profile
        return -p.q * s + s * (p.a - s + p.q) * p.weight(x)

    def dfds(self, x, s):
        p = self.profile
        return -p.q + (p.a - 2.0 * s + p.q) * p.weight(x)


@dataclass(frozen=True)
class FunctionProfile:
    func: object
    extent: float
    tails: tuple
    niche_interval: tuple = (0.0, 0.0)

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)


class Custom(GrowthModel):
    """User-supplied vectorized ``f(x, s)`` and ``d_s f(x, s)``.

    ``extent`` bounds the region where ``f`` depends on ``x``; ``tails`` are
    the limits of ``d_s f(x, 0)`` as ``x -> -inf`` and ``x -> +inf``.
    """

    def __init__(self, f, dfds, saturation, extent, tails, niche_interval=(0.0, 0.0)):
        self._f = f
        self._dfds = dfds
        self.saturation = float(saturation)
        self.profile = FunctionProfile(lambda x: dfds(x, 0.0), float(extent), tuple(tails), niche_interval)

    def f(self, x, s):
        return np.asarray(self._f(x, s), dtype=float)

    def dfds(self, x, s):
        return np.asarray(self._dfds(x, s), dtype=float)


# -- operations -----------------------------------------------------------


def make_profile(spec):
    """Build a profile from a dict (``kind`` = niche | constant | csv)."""
    if not isinstance(spec, dict):
        return as_profile(spec)
    spec = dict(spec)
    kind = spec.pop("kind", "niche")
    if kind == "niche":
        if any(k in spec for k in ("outer_left", "outer_right", "left", "right")):
            return NicheProfile(**{k: float(v) for k, v in spec.items()})
        return niche_profile(**{k: float(v) for k, v in spec.items()})
    if kind == "constant":
        return ConstantProfile(float(spec["value"]))
    if kind == "csv":
        return TabulatedProfile.from_csv(spec["path"], spec["tail_left"], spec["tail_right"])
    raise ValidationError("environment.make_profile", f"unknown profile kind {kind!r}")


def make_growth(spec, require_lethal_tail=True):
    """Build a growth model and check the KPP hypotheses on a dense sample.

    ``spec`` is a dict with ``form`` in ``{"logistic", "plateau", "custom"}``
    or an existing :class:`GrowthModel` (which is then only verified).
    """
    if isinstance(spec, GrowthModel):
        model = spec
    else:
        spec = dict(spec)
        form = spec.pop("form", "logistic")
        if form == "logistic":
            model = Logistic(make_profile(spec.get("a", {})), spec.get("b", 1.0))
        elif form == "plateau":
            model = Plateau(spec["a"], spec["q"], spec["L"], spec["L0"])
        elif form == "custom":
            model = Custom(**spec)
        else:
            raise ValidationError("environment.make_growth", f"unknown growth form {form!r}")
    verify_growth(model, require_lethal_tail)
    return model


def verify_growth(model, require_lethal_tail=True):
    """Raise :class:`ValidationError` naming the offending ``(x, s)`` if a
    KPP hypothesis fails on the verification sample."""
    where = "environment.make_growth"
    x = model.verification_x()
    f0 = model.f(x, 0.0)
    if np.any(f0 != 0.0):
        i = int(np.argmax(np.abs(f0)))
        raise ValidationError(where, f"f(x, 0) = {f0[i]} != 0 at x={x[i]}")
    M = model.saturation
    if M > 0:
        ladder = np.geomspace(1e-6, M, LADDER_SIZE) if M > 1e-6 else np.array([M])
        prev = None
        for s in ladder:
            ratio = model.f(x, s) / s
            if prev is not None:
                scale = max(1.0, float(np.max(np.abs(ratio))))
                bad = ratio > prev + 64 * np.finfo(float).eps * scale
                if np.any(bad):
                    i = int(np.argmax(bad))
                    raise ValidationError(where, f"f(x, s)/s increases in s at x={x[i]}, s={s}")
            prev = ratio
        fM = model.f(x, M)
        if np.any(fM > 1e-12 * max(1.0, M)):
            i = int(np.argmax(fM))
            raise ValidationError(where, f"f(x, S) = {fM[i]} > 0 at x={x[i]}: S is not a saturation level")
    if require_lethal_tail and max(model.tails) >= 0:
        raise ValidationError(
            where, f"growth rate tails {model.tails} must be negative (lethal environment far away)"
        )
    return model


def linearization(model):
    """Return the callable ``x -> d_s f(x, 0)``."""
    return model.a


def finite_difference_rate(model, x, h=1e-6):
    """One-sided estimate ``f(x, h) / h`` of the linearization."""
    return model.f(np.asarray(x, dtype=float), h) / h


@dataclass(frozen=True)
class TailBound:
    """``a(x) + delta <= -kappa`` for every ``|x| >= R0``."""

    R0: float
    kappa: float
    delta: float


def tail_bounds(model, delta):
    """Smallest sampled ``R0`` and the matching ``kappa`` for a given ``delta``."""
    profile = as_profile(model)
    delta = float(delta)
    a_tail = max(profile.tails)
    if not delta > 0 or a_tail + delta >= 0:
        raise NoTailBound(
            "environment.tail_bounds",
            f"no-tail-bound: tails {profile.tails} never drop below -delta = {-delta}",
        )
    kappa = -a_tail - delta
    radii = sample_radii(profile)
    left = profile(-radii)
    right = profile(radii)
    worst = np.maximum(left, right)
    # sup over |x| >= r_k, sample beyond the extent included
    suffix = np.maximum.accumulate(worst[::-1])[::-1]
    ok = suffix <= a_tail + 1e-12 * max(1.0, abs(a_tail))
    k = int(np.argmax(ok))
    R0 = float(radii[k]) if radii[k] > 0 else float(radii[1])
    return TailBound(R0=R0, kappa=kappa, delta=delta)
