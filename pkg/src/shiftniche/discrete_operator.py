"""Grid discretization of ``eps D_xx + c D_x + M_Omega + a`` on ``(-R, R)``.

Boundary conventions
--------------------
The drift uses first-order upwinding chosen by the sign of ``c``:

* ``c > 0``: forward difference ``c (v[i+1] - v[i]) / h`` with a zero ghost
  value past ``+R``;
* ``c < 0``: backward difference ``c (v[i] - v[i-1]) / h`` with a zero ghost
  value past ``-R``.

Both choices make every off-diagonal entry nonnegative (the matrix is
Metzler), so Perron theory applies, and they put the vanishing ghost exactly
at the endpoint where the principal eigenfunction of the continuous problem
vanishes. With ``eps > 0`` the centered second difference has zero ghosts
on both sides.

The convolution is truncated to the grid and not renormalized: the mass lost
near the boundary is part of ``M_Omega u = int_Omega J(x - y) u(y) dy - u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve

from .environment import as_profile
from .errors import MetzlerViolation, ValidationError

DENSE_LIMIT = 2048
_FFT_THRESHOLD = 2e7


@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``n`` points on ``[-R, R]``.

    Abscissae are computed as ``h * (i - (n - 1) / 2)`` so grids sharing a
    spacing are bitwise nested and every grid is exactly symmetric about 0.
    """

    half_width: float
    n: int

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValidationError("discrete_operator.Grid", f"half_width must be positive, got {self.half_width}")
        if self.n < 16:
            raise ValidationError("discrete_operator.Grid", f"need at least 16 points, got {self.n}")

    @classmethod
    def from_spacing(cls, R, h):
        m = 2.0 * R / h
        n = int(round(m)) + 1
        if abs(m - (n - 1)) > 1e-9 * max(1.0, m):
            raise ValidationError(
                "discrete_operator.Grid", f"2R/h = {m} is not an integer (R={R}, h={h})"
            )
        return cls(float(R), n)

    @property
    def h(self):
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def x(self):
        return self.h * (np.arange(self.n) - 0.5 * (self.n - 1))

    def index_of(self, x):
        """Index of the grid point nearest to ``x``."""
        return int(round(x / self.h + 0.5 * (self.n - 1)))


def _potential_values(grid, a):
    if a is None:
        return np.zeros(grid.n)
    if np.ndim(a) == 1 and not callable(a):
        vals = np.array(a, dtype=float)
        if vals.shape != (grid.n,):
            raise ValidationError("discrete_operator.assemble", "potential array has the wrong length")
        return vals
    return np.asarray(as_profile(a)(grid.x), dtype=float) * np.ones(grid.n)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Assembled operator; see :func:`assemble`."""

    grid: Grid
    c: float
    epsilon: float
    K: int
    weights: np.ndarray
    a_values: np.ndarray
    dual: bool = False
    kernel: object = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.grid.n

    @property
    def h(self):
        return self.grid.h

    @property
    def shift(self):
        """``k`` making ``A + k I`` entrywise nonnegative."""
        h = self.h
        return 1.0 + float(np.max(np.abs(self.a_values))) + abs(self.c) / h + 2.0 * self.epsilon / h**2

    @property
    def bc(self):
        """Which ghost values vanish (the dual flips the drift side)."""
        ghosts = set()
        if self.epsilon > 0:
            ghosts |= {"-R", "+R"}
        if self.c != 0:
            right = (self.c > 0) != self.dual
            ghosts.add("+R" if right else "-R")
        return {"zero_ghosts": tuple(sorted(ghosts)), "drift": _drift_name(self.c, self.dual)}

    def with_potential(self, a):
        """Same linear part, new zero-order coefficient."""
        return DiscreteOperator(
            self.grid, self.c, self.epsilon, self.K, self.weights,
            _readonly(_potential_values(self.grid, a)), self.dual, self.kernel,
        )

    def transpose(self):
        """Exact transpose, i.e. the discrete dual operator."""
        return DiscreteOperator(
            self.grid, self.c, self.epsilon, self.K, self.weights, self.a_values,
            not self.dual, self.kernel,
        )

    # -- matrix-free ------------------------------------------------------

    def convolve(self, v, method="auto"):
        """``sum_j W[i, j] v[j]`` with ``W[i, j] = w[K + i - j]`` (transposed for the dual)."""
        w = self.weights[::-1] if self.dual else self.weights
        if method == "auto":
            method = "fft" if v.size * w.size > _FFT_THRESHOLD else "direct"
        if method == "direct":
            full = np.convolve(v, w)
        elif method == "fft":
            full = fftconvolve(v, w)
        else:
            raise ValidationError("discrete_operator.apply", f"unknown method {method!r}")
        return full[self.K : self.K + v.size]

    def drift(self, v):
        if self.c == 0:
            return np.zeros_like(v)
        coef = abs(self.c) / self.h
        nb = np.zeros_like(v)
        if (self.c > 0) != self.dual:
            nb[:-1] = v[1:]
        else:
            nb[1:] = v[:-1]
        return coef * (nb - v)

    def viscous(self, v):
        if self.epsilon == 0:
            return np.zeros_like(v)
        lap = -2.0 * v
        lap[:-1] += v[1:]
        lap[1:] += v[:-1]
        return (self.epsilon / self.h**2) * lap

    def apply_linear(self, v, method="auto"):
        """Everything except the zero-order term ``a v``."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValidationError("discrete_operator.apply", f"expected length {self.n}, got {v.shape}")
        return self.convolve(v, method) - v + self.drift(v) + self.viscous(v)

    def apply(self, v, method="auto"):
        """Return ``A v``; ``method`` selects direct or FFT convolution."""
        v = np.asarray(v, dtype=float)
        return self.apply_linear(v, method) + self.a_values * v

    # -- assembled --------------------------------------------------------

    def sparse(self):
        """CSR matrix of the operator (cached)."""
        if "sparse" in self._cache:
            return self._cache["sparse"]
        if self.dual:
            mat = self.transpose().sparse().T.tocsr()
        else:
            mat = _assemble_sparse(self)
        self._cache["sparse"] = mat
        return mat

    def dense(self):
        if self.n > DENSE_LIMIT:
            raise ValidationError(
                "discrete_operator.dense", f"dense assembly is limited to n <= {DENSE_LIMIT}, got {self.n}"
            )
        return self.sparse().toarray()

    def dispersal_row_sums(self):
        """Row sums of ``W - I`` (pure dispersal part)."""
        return self.convolve(np.ones(self.n), "direct") - 1.0


def _drift_name(c, dual):
    if c == 0:
        return "none"
    return "forward" if (c > 0) != dual else "backward"


def _readonly(arr):
    arr = np.asarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _assemble_sparse(op):
    n, h, K, w = op.n, op.h, op.K, op.weights
    diagonals = {}
    for k in range(-K, K + 1):
        if k == 0 or w[K + k] == 0.0:
            continue
        # W[i, j] = w[K + i - j] lives on diagonal j - i = -k
        diagonals[-k] = np.full(n - abs(k), w[K + k])
    main = (w[K] - 1.0) + op.a_values - abs(op.c) / h - 2.0 * op.epsilon / h**2
    diagonals[0] = main
    if op.c != 0:
        d = 1 if op.c > 0 else -1
        diagonals[d] = diagonals.get(d, np.zeros(n - 1)) + abs(op.c) / h
    if op.epsilon > 0:
        for d in (-1, 1):
            diagonals[d] = diagonals.get(d, np.zeros(n - 1)) + op.epsilon / h**2
    offsets = sorted(diagonals)
    mat = sp.diags([diagonals[d] for d in offsets], offsets, shape=(n, n), format="csr")
    off = mat - sp.diags(mat.diagonal())
    if off.nnz and off.data.min() < 0:
        raise MetzlerViolation("discrete_operator.assemble", f"negative off-diagonal entry {off.data.min()}")
    return mat


def assemble(grid, kernel, c=0.0, epsilon=0.0, a=None, dual=False):
    """Discretize ``eps D_xx + c D_x + M_Omega + a`` on ``grid``.

    Parameters
    ----------
    grid : Grid
    kernel : Kernel
    c : float
        Frame speed; selects the upwind direction.
    epsilon : float
        Viscosity, ``>= 0``.
    a : callable, array, float, GrowthModel or None
        Zero-order coefficient; growth models contribute their linearization.
    dual : bool
        Build the exact transpose.
    """
    c = float(c)
    epsilon = float(epsilon)
    if not math.isfinite(c) or not math.isfinite(epsilon) or epsilon < 0:
        raise ValidationError("discrete_operator.assemble", f"need finite c and epsilon >= 0 (c={c}, eps={epsilon})")
    h = grid.h
    K, w = kernel.weights(h)
    Keff = min(K, grid.n - 1)
    w = w[K - Keff : K + Keff + 1]
    if Keff < 1 or w[Keff - 1] <= 0 or w[Keff + 1] <= 0:
        raise ValidationError(
            "discrete_operator.assemble",
            f"grid spacing h={h} is not below the radius where J > 0; the operator would be reducible",
        )
    if np.any(w < 0):
        raise MetzlerViolation("discrete_operator.assemble", "negative kernel weight")
    op = DiscreteOperator(grid, c, epsilon, Keff, _readonly(w), _readonly(_potential_values(grid, a)), dual, kernel)
    if grid.n <= DENSE_LIMIT or Keff < 256:
        op.sparse()  # Metzler check on assembly
    return op


def save_dense_csv(op, path):
    """Row-major, header-free CSV of the dense matrix."""
    mat = op.dense()
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for row in mat:
            fh.write(",".join(format(float(v), ".17g") for v in row))
            fh.write("\n")
