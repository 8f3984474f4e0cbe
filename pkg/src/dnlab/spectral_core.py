"""Diagonal spectral representation of the operator ``L`` on (0, 1).

States are coefficient arrays in the eigenbasis of ``L``. The last axis always
holds the ``d`` retained modes, so a batch of states is simply an array of
shape ``(..., d)``. Physical fields live on ``n_grid`` uniform interior nodes
``xi_j = j / (n_grid + 1)``; the transforms between the two representations
are type-I discrete sine transforms.

With eigenfunctions ``e_k(xi) = sqrt(2) sin(k pi xi)`` and the quadrature
weight ``h = 1 / (n_grid + 1)``, the discrete inner product
``h * sum_j e_k(xi_j) e_l(xi_j)`` equals ``delta_kl`` exactly for
``k, l <= n_grid``, which makes synthesis an isometry on band-limited fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft

__all__ = [
    "SpectralBasis",
    "eigenvalue",
    "apply_frac_power",
    "resolvent",
    "norm_H",
    "norm_V_sigma",
    "synthesize",
    "analyze",
    "grid_norm",
]


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated eigenbasis of ``L`` with eigenvalues ``(k pi)**rho``.

    Parameters
    ----------
    d : int
        Number of retained modes.
    rho : float
        Spectral growth exponent. ``rho = 2`` is the Dirichlet Laplacian.
    n_grid : int, optional
        Number of interior collocation nodes, at least ``2 * d``. Defaults to
        ``2 * d``.
    """

    d: int
    rho: float = 2.0
    n_grid: int | None = None
    eigenvalues: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho!r}")
        n = 2 * self.d if self.n_grid is None else int(self.n_grid)
        if n < 2 * self.d:
            raise ValueError(f"n_grid={n} is below the oversampling floor 2*d={2 * self.d}")
        object.__setattr__(self, "n_grid", n)
        lam = (np.pi * np.arange(1, self.d + 1)) ** self.rho
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def nodes(self) -> np.ndarray:
        """Interior collocation nodes on (0, 1)."""
        return np.arange(1, self.n_grid + 1) / (self.n_grid + 1)

    @property
    def h(self) -> float:
        """Quadrature weight of the uniform grid."""
        return 1.0 / (self.n_grid + 1)

    def basis_vector(self, k: int) -> np.ndarray:
        """Coefficient array of ``e_k`` (1-based mode index)."""
        if not 1 <= k <= self.d:
            raise IndexError(f"mode {k} outside 1..{self.d}")
        x = np.zeros(self.d)
        x[k - 1] = 1.0
        return x

    def eigenfunction_values(self, k: int) -> np.ndarray:
        """``e_k`` evaluated at the collocation nodes."""
        return np.sqrt(2.0) * np.sin(k * np.pi * self.nodes)


def eigenvalue(k: int, basis: SpectralBasis) -> float:
    """Return ``lambda_k = (k pi)**rho`` for the 1-based mode index ``k``."""
    if not 1 <= k <= basis.d:
        raise IndexError(f"mode {k} outside 1..{basis.d}")
    return float(basis.eigenvalues[k - 1])


def _check_dim(x: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (basis.d,):
        raise ValueError(f"expected trailing dimension {basis.d}, got shape {x.shape}")
    return x


def apply_frac_power(x, sigma: float, basis: SpectralBasis) -> np.ndarray:
    """Apply ``L**sigma`` mode-wise, ``sigma`` in [-1, 2]."""
    if not -1.0 <= sigma <= 2.0:
        raise ValueError(f"sigma must lie in [-1, 2], got {sigma}")
    x = _check_dim(x, basis)
    return basis.eigenvalues**sigma * x


def resolvent(x, mu: float, basis: SpectralBasis) -> np.ndarray:
    """Apply ``(I + mu L)^{-1}``; a contraction on H for every ``mu > 0``."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    x = _check_dim(x, basis)
    return x / (1.0 + mu * basis.eigenvalues)


def norm_H(x) -> np.ndarray:
    """Euclidean norm of the coefficients over the last axis."""
    return np.linalg.norm(np.asarray(x, dtype=float), axis=-1)


def norm_V_sigma(x, sigma: float, basis: SpectralBasis) -> np.ndarray:
    """Norm of ``V_{2 sigma}``: ``sqrt(sum lambda_k**(2 sigma) x_k**2)``."""
    x = _check_dim(x, basis)
    return np.sqrt(np.sum(basis.eigenvalues ** (2.0 * sigma) * x**2, axis=-1))


def synthesize(x, basis: SpectralBasis) -> np.ndarray:
    """Evaluate ``sum_k x_k e_k`` at the collocation nodes.

    Parameters
    ----------
    x : array_like, shape (..., d)
        Coefficients.
    basis : SpectralBasis

    Returns
    -------
    ndarray, shape (..., n_grid)
    """
    x = _check_dim(x, basis)
    n = basis.n_grid
    padded = np.zeros(x.shape[:-1] + (n,))
    padded[..., : basis.d] = x
    # scipy's DST-I carries a factor 2 in front of the sine sum
    return fft.dst(padded, type=1, axis=-1) * (np.sqrt(2.0) / 2.0)


def analyze(f, basis: SpectralBasis) -> np.ndarray:
    """Project a grid field onto the ``d`` retained modes.

    The projection is the discrete L2 projection; ``analyze(synthesize(x))``
    recovers ``x`` to rounding.
    """
    f = np.asarray(f, dtype=float)
    if f.shape[-1:] != (basis.n_grid,):
        raise ValueError(f"expected trailing dimension {basis.n_grid}, got shape {f.shape}")
    c = fft.dst(f, type=1, axis=-1)[..., : basis.d]
    return c * (basis.h * np.sqrt(2.0) / 2.0)


def grid_norm(f, basis: SpectralBasis) -> np.ndarray:
    """Discrete L2(0, 1) norm of a grid field, ``sqrt(h sum f_j**2)``."""
    f = np.asarray(f, dtype=float)
    return np.sqrt(basis.h * np.sum(f**2, axis=-1))
