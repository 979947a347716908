"""Lorentz-model hyperbolic geometry.

Points live on one sheet of the hyperboloid {u : <u,u>_H = -1/rho} with
curvature -rho (rho > 0). A point is stored as its space part u_s (a row of
`Points.space`) plus the derived time part u_t = sqrt(1/rho + |u_s|^2); the
time part is always recomputed from the space part, never stored as a free
parameter, so the manifold constraint holds by construction.

Every function is differentiable through the autodiff engine and operates on
batches: `Points` holds N points as rows, and pair functions (inner product,
geodesic, exterior angle, angle distance) return the full N x M matrix over
two batches.

Numerical guards: acos/asin arguments are clamped to [-1, 1] and acosh
arguments to >= 1 (zero gradient outside the domain); genuinely undefined
configurations (exterior angle at the origin or between coincident points)
raise GeometryError instead of being silently patched.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, GeometryError, ShapeError

# sinh(t)/t switches to its Taylor expansion below this threshold
_TAYLOR_T = 1e-4


@dataclass(frozen=True)
class GeometryConfig:
    curvature: float = 1.0
    dim: int = 16
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.curvature > 0:
            raise ConfigError(f"curvature must be positive, got {self.curvature}")
        if self.dim < 2:
            raise ConfigError(f"dimension must be at least 2, got {self.dim}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def sqrt_curvature(self):
        return float(np.sqrt(self.curvature))


class Points:
    """A batch of manifold points; row i of `space` is point i.

    `sumsq` and `space_norms` are cached: repeated angle computations on the
    same batch reuse one graph node, and gradients accumulate through the
    shared node exactly as through any other fan-out.
    """

    __slots__ = ("space", "time", "_sumsq", "_norms")

    def __init__(self, space, time, sumsq=None):
        self.space = space
        self.time = time
        self._sumsq = sumsq
        self._norms = None

    @property
    def count(self):
        return self.space.shape[0]

    @property
    def dim(self):
        return self.space.shape[1]

    def sumsq(self):
        if self._sumsq is None:
            self._sumsq = space_sumsq(self.space)
        return self._sumsq

    def space_norms(self):
        if self._norms is None:
            self._norms = ad.sqrt(self.sumsq())
        return self._norms


def _as_matrix(x):
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    if x.ndim == 1:
        x = x.reshape(1, x.shape[0])
    if x.ndim != 2:
        raise ShapeError(f"expected points as rows of a matrix, got shape {x.shape}")
    return x


def space_sumsq(space):
    return (space * space).sum(axis=1, keepdims=True)


def time_from_space(space, cfg):
    """u_t = sqrt(1/rho + |u_s|^2), one value per row."""
    space = _as_matrix(space)
    return ad.sqrt(space_sumsq(space) + 1.0 / cfg.curvature)


def from_space(space, cfg):
    space = _as_matrix(space)
    sumsq = space_sumsq(space)
    return Points(space, ad.sqrt(sumsq + 1.0 / cfg.curvature), sumsq=sumsq)


def origin(cfg, n=1):
    return from_space(np.zeros((n, cfg.dim)), cfg)


def select(points, rows):
    """Points restricted to the given row indices."""
    idx = np.asarray(rows)
    sumsq = None if points._sumsq is None else points._sumsq[idx]
    return Points(points.space[idx], points.time[idx], sumsq=sumsq)


def exp_map_origin(x, cfg):
    """Map tangent vectors at the origin onto the manifold.

    space = x * sinh(sqrt(rho)|x|) / (sqrt(rho)|x|), with the ratio replaced
    by its Taylor expansion 1 + t^2/6 + t^4/120 for t = sqrt(rho)|x| below
    1e-4, so the map and its gradient stay finite at x = 0.
    """
    x = _as_matrix(x)
    sumsq = space_sumsq(x)
    t2 = _scale(sumsq, cfg.curvature)
    small = t2.data < _TAYLOR_T * _TAYLOR_T
    t2_safe = ad.where(small, np.ones_like(t2.data), t2)
    t = ad.sqrt(t2_safe)
    ratio_series = 1.0 + t2 * (1.0 / 6.0) + (t2 * t2) * (1.0 / 120.0)
    ratio = ad.where(small, ratio_series, ad.sinh(t) / t)
    return from_space(x * ratio, cfg)


def _scale(t, s):
    return t if s == 1.0 else t * s


def lorentz_inner(u, v):
    """Pairwise Lorentzian inner products <u_i, v_j>_H as an N x M matrix."""
    if u.dim != v.dim:
        raise ShapeError(
            f"lorentz_inner: dimension mismatch, {u.dim} versus {v.dim}"
        )
    return u.space @ v.space.T - u.time @ v.time.T


def geodesic(u, v, cfg):
    """Pairwise geodesic distances sqrt(1/rho) * acosh(-rho <u,v>_H)."""
    arg = ad.clip(_scale(lorentz_inner(u, v), -cfg.curvature), 1.0, None)
    return _scale(ad.acosh(arg), 1.0 / cfg.sqrt_curvature)


def _space_norms(u, cfg, caller):
    sumsq = u.sumsq()
    if np.any(sumsq.data < cfg.epsilon * cfg.epsilon):
        raise GeometryError(f"{caller} is undefined for a point at the origin")
    return u.space_norms()


def _exterior_angle_from_inner(rho_inner, u, v, norm_u, cfg):
    # rho_inner = rho * <u_i, v_j>_H, always <= -1 on the manifold
    if np.any(-rho_inner.data - 1.0 < cfg.epsilon):
        raise GeometryError(
            "exterior angle is undefined for coincident points"
        )
    num = v.time.T + u.time * rho_inner
    denom = norm_u * ad.sqrt(rho_inner * rho_inner - 1.0)
    return ad.acos(ad.clip(num / denom, -1.0, 1.0))


def exterior_angle(u, v, cfg):
    """Pairwise exterior angles theta(u_i, v_j) in [0, pi].

    theta(u, v) = acos((v_t + u_t * rho<u,v>_H)
                       / (|u_s| * sqrt((rho<u,v>_H)^2 - 1))),
    the angle pi - angle(O, u, v) of the geodesic triangle through the
    origin. Undefined (GeometryError) when u sits at the origin or u == v.
    """
    norm_u = _space_norms(u, cfg, "exterior angle")
    rho_inner = _scale(lorentz_inner(u, v), cfg.curvature)
    return _exterior_angle_from_inner(rho_inner, u, v, norm_u, cfg)


def angle_distance(u, v, cfg):
    """Pairwise angle distances theta(u_i,v_j) + theta(v_j,u_i) - pi."""
    norm_u = _space_norms(u, cfg, "angle distance")
    norm_v = _space_norms(v, cfg, "angle distance")
    rho_inner = _scale(lorentz_inner(u, v), cfg.curvature)
    t_uv = _exterior_angle_from_inner(rho_inner, u, v, norm_u, cfg)
    t_vu = _exterior_angle_from_inner(rho_inner.T, v, u, norm_v, cfg)
    return t_uv + t_vu.T - np.pi


def half_aperture(u, cfg, alpha=0.1):
    """Entailment-cone half-aperture asin(2 alpha / (sqrt(rho) |u_s|)).

    One value per row. Points with |u_s| below the in-domain boundary
    2 alpha / sqrt(rho) get the maximal aperture pi/2 (argument clamped
    to 1); a point at the origin itself is an error.
    """
    norm_u = _space_norms(u, cfg, "half aperture")
    arg = ad.clip((2.0 * alpha / cfg.sqrt_curvature) / norm_u, None, 1.0)
    return ad.asin(arg)


def to_poincare_disk(u, cfg):
    """Project the first two space coordinates to the Poincare disk.

    p_i = u_{s,i} / (u_t + 1/sqrt(rho)) for i = 0, 1; plain numpy, used for
    embedding export only.
    """
    space = u.space.data
    time = u.time.data
    return space[:, :2] / (time + 1.0 / cfg.sqrt_curvature)
