"""Gaussian-process implicit surfaces for tactile object-shape reconstruction.

An object surface is the zero level set of a signed function ``f`` (negative
inside, positive outside). Observed contact points carry value 0; off-surface
control points generated along the surface normals carry +/- the offset so the
regression learns the sign convention. The GP uses an RBF kernel whose two
hyperparameters are picked by maximizing the log marginal likelihood over a
log-spaced grid with local refinement, which keeps the fit deterministic.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .errors import NumericalError, ValidationError
from .validation import as_points

_JITTER = 1e-8  # added once if the Gram factorization fails


@dataclass(frozen=True)
class TrainingSet:
    """Signed training samples for the implicit function (values in mm)."""

    points: np.ndarray
    values: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        points = as_points(self.points, "points")
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(values) != len(points):
            raise ValidationError("points and values must have equal length")
        if not np.all(np.isfinite(values)):
            raise ValidationError("values contain non-finite entries")
        if self.noise_variance < 0:
            raise ValidationError("noise_variance must be >= 0")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)


def generate_control_points(positions, normals, offset: float = 2.0, noise_variance: float = 1e-6) -> TrainingSet:
    """Surface samples plus one exterior (+offset) and one interior (-offset)
    control point per contact, along the outward normal."""
    positions = as_points(positions, "positions")
    normals = as_points(normals, "normals")
    if len(positions) != len(normals):
        raise ValidationError("positions and normals must have equal length")
    lengths = np.linalg.norm(normals, axis=1)
    if np.any(lengths < 1e-12):
        raise ValidationError("zero-length normal")
    if not offset > 0:
        raise ValidationError("offset must be positive")
    unit = normals / lengths[:, None]
    points = np.concatenate([positions, positions + offset * unit, positions - offset * unit])
    values = np.concatenate(
        [np.zeros(len(positions)), np.full(len(positions), offset), np.full(len(positions), -offset)]
    )
    return TrainingSet(points, values, noise_variance)


def rbf_kernel(a, b, sigma_f2: float, length_scale: float) -> np.ndarray:
    """``sigma_f2 * exp(-|a - b|^2 / (2 l^2))``, broadcast over point arrays."""
    if not length_scale > 0:
        raise ValidationError("length_scale must be positive")
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return sigma_f2 * np.exp(-d2 / (2.0 * length_scale ** 2))


def _cho_gram(d2: np.ndarray, sigma_f2: float, length_scale: float, noise_variance: float):
    """Cholesky of K + noise*I, retrying once with jitter; (factor, jitter) or None."""
    K = sigma_f2 * np.exp(-d2 / (2.0 * length_scale ** 2))
    K[np.diag_indices_from(K)] += noise_variance
    try:
        return cho_factor(K, lower=True), 0.0
    except np.linalg.LinAlgError:
        K[np.diag_indices_from(K)] += _JITTER
        try:
            return cho_factor(K, lower=True), _JITTER
        except np.linalg.LinAlgError:
            return None


def _sq_dists(points: np.ndarray) -> np.ndarray:
    sq = (points ** 2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _cross_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = a @ b.T
    d2 *= -2.0
    d2 += (a ** 2).sum(axis=1)[:, None]
    d2 += (b ** 2).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0, out=d2)


def log_marginal_likelihood(train: TrainingSet, sigma_f2: float, length_scale: float, prior_mean: float = 0.0) -> float:
    """Gaussian log evidence of the training values under the RBF prior."""
    factored = _cho_gram(_sq_dists(train.points), sigma_f2, length_scale, train.noise_variance)
    if factored is None:
        raise NumericalError("Gram matrix is singular even after jitter")
    cho, _ = factored
    y = train.values - prior_mean
    alpha = cho_solve(cho, y)
    logdet = 2.0 * np.log(np.diag(cho[0])).sum()
    n = len(y)
    return float(-0.5 * y @ alpha - 0.5 * logdet - 0.5 * n * np.log(2.0 * np.pi))


class GaussianProcessImplicitSurface(BaseEstimator):
    """GP regressor of a signed implicit function with grid-fitted RBF kernel.

    Parameters
    ----------
    noise_variance : observation noise added to the Gram diagonal (mm^2)
    sigma_f2_bounds, length_scale_bounds : search ranges for the two kernel
        hyperparameters; the fit maximizes the log marginal likelihood on a
        ``grid_size x grid_size`` log grid, then zooms ``refine_rounds`` times.
    prior_mean : constant mean subtracted before and added back after
        regression; far from all data the predictive mean reverts to it.
    """

    def __init__(
        self,
        noise_variance: float = 1e-6,
        sigma_f2_bounds: Tuple[float, float] = (1e-2, 1e4),
        length_scale_bounds: Tuple[float, float] = (0.5, 100.0),
        grid_size: int = 20,
        refine_rounds: int = 2,
        refine_grid_size: int = 5,
        prior_mean: float = 0.0,
    ):
        self.noise_variance = noise_variance
        self.sigma_f2_bounds = sigma_f2_bounds
        self.length_scale_bounds = length_scale_bounds
        self.grid_size = grid_size
        self.refine_rounds = refine_rounds
        self.refine_grid_size = refine_grid_size
        self.prior_mean = prior_mean

    @classmethod
    def from_training_set(cls, train: TrainingSet, **params) -> "GaussianProcessImplicitSurface":
        est = cls(noise_variance=train.noise_variance, **params)
        return est.fit(train.points, train.values)

    def _lml_grid(self, d2, y, sf_grid, ls_grid):
        best = (-np.inf, sf_grid[0], ls_grid[0])
        for ls in ls_grid:
            for sf in sf_grid:
                factored = _cho_gram(d2, sf, ls, self.noise_variance)
                if factored is None:
                    continue
                cho, jitter = factored
                # near-singular Gram matrices inflate the evidence through a
                # roundoff log-det and destroy interpolation; keep the search
                # inside the numerically well-posed region
                diag = np.diag(cho[0])
                if jitter > 0.0 or diag.min() <= 1e-4 * diag.max():
                    continue
                alpha = cho_solve(cho, y)
                lml = -0.5 * y @ alpha - np.log(diag).sum() - 0.5 * len(y) * np.log(2 * np.pi)
                if lml > best[0]:
                    best = (float(lml), float(sf), float(ls))
        return best

    def fit(self, X, y) -> "GaussianProcessImplicitSurface":
        """Pick hyperparameters by marginal likelihood and precompute the
        inverse Gram matrix."""
        X = as_points(X, "X")
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if len(y) != len(X):
            raise ValidationError("X and y must have equal length")
        if len(X) < 3:
            raise ValidationError("need at least 3 training points")
        if len(X) > 2000:
            raise ValidationError("training set too large for a local model (N > 2000)")

        d2 = _sq_dists(X)
        yc = y - self.prior_mean
        lo_f, hi_f = self.sigma_f2_bounds
        lo_l, hi_l = self.length_scale_bounds
        sf_grid = np.logspace(np.log10(lo_f), np.log10(hi_f), self.grid_size)
        ls_grid = np.logspace(np.log10(lo_l), np.log10(hi_l), self.grid_size)
        lml, sf, ls = self._lml_grid(d2, yc, sf_grid, ls_grid)

        sf_step = sf_grid[1] / sf_grid[0] if len(sf_grid) > 1 else 2.0
        ls_step = ls_grid[1] / ls_grid[0] if len(ls_grid) > 1 else 2.0
        for _ in range(self.refine_rounds):
            sf_grid = np.logspace(
                np.log10(max(sf / sf_step, lo_f)), np.log10(min(sf * sf_step, hi_f)), self.refine_grid_size
            )
            ls_grid = np.logspace(
                np.log10(max(ls / ls_step, lo_l)), np.log10(min(ls * ls_step, hi_l)), self.refine_grid_size
            )
            cand = self._lml_grid(d2, yc, sf_grid, ls_grid)
            if cand[0] > lml:
                lml, sf, ls = cand
            sf_step = max(sf_grid[1] / sf_grid[0], 1.0 + 1e-12)
            ls_step = max(ls_grid[1] / ls_grid[0], 1.0 + 1e-12)

        factored = _cho_gram(d2, sf, ls, self.noise_variance)
        if factored is None:
            raise NumericalError("Gram matrix is singular even after jitter")
        cho, jitter = factored
        if not np.isfinite(lml):
            # no numerically stable grid point (e.g. duplicates with zero
            # noise); report the evidence of the jittered fallback model
            alpha0 = cho_solve(cho, yc)
            lml = float(
                -0.5 * yc @ alpha0 - np.log(np.diag(cho[0])).sum() - 0.5 * len(yc) * np.log(2 * np.pi)
            )
        n = len(X)
        self.X_train_ = X
        self.y_train_ = y
        self.sigma_f2_ = sf
        self.length_scale_ = ls
        self.lml_ = lml
        self.noise_jitter_ = jitter
        self.gram_inverse_ = cho_solve(cho, np.eye(n))
        self.alpha_ = self.gram_inverse_ @ yc
        return self

    def predict(self, X, return_variance: bool = False, chunk: Optional[int] = None):
        """Predictive mean (and optionally variance) at query points.

        Accepts one point or an (Q, 3) array; variances are clamped at zero.
        Queries are processed in chunks sized to bound the kernel matrix.
        """
        if not hasattr(self, "alpha_"):
            raise ValidationError("model is not fitted")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = as_points(X.reshape(-1, 3), "X")
        if chunk is None:
            chunk = max(1024, 20_000_000 // max(1, len(self.X_train_)))
        mean = np.empty(len(X))
        var = np.empty(len(X)) if return_variance else None
        inv_2l2 = 1.0 / (2.0 * self.length_scale_ ** 2)
        for start in range(0, len(X), chunk):
            q = X[start : start + chunk]
            ks = _cross_sq_dists(self.X_train_, q)  # reused in place as the kernel matrix
            ks *= -inv_2l2
            np.exp(ks, out=ks)
            ks *= self.sigma_f2_
            mean[start : start + chunk] = self.prior_mean + ks.T @ self.alpha_
            if return_variance:
                v = self.sigma_f2_ - (ks * (self.gram_inverse_ @ ks)).sum(axis=0)
                var[start : start + chunk] = np.maximum(v, 0.0)
        if single:
            return (float(mean[0]), float(var[0])) if return_variance else float(mean[0])
        return (mean, var) if return_variance else mean


@dataclass(frozen=True)
class SurfacePatch:
    """Extracted zero-isosurface points with their span along the exploration path."""

    points: np.ndarray
    source_interval: Tuple[float, float]

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        lo, hi = self.source_interval
        if hi < lo:
            raise ValidationError("source_interval must be (lo, hi) with hi >= lo")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "source_interval", (float(lo), float(hi)))


def extract_isosurface(
    model: GaussianProcessImplicitSurface,
    region,
    resolution: float,
    axis: int = 0,
    interval: Optional[Tuple[float, float]] = None,
    variance_fraction: float = 0.5,
) -> SurfacePatch:
    """Zero-crossing points of the predictive mean on a voxel grid.

    Voxel centers fill the axis-aligned ``region`` at the given spacing; every
    grid edge whose endpoint means change sign contributes one point, refined
    by a single bisection step. Points whose predictive variance exceeds
    ``variance_fraction * sigma_f2`` (low-confidence, far from data) are
    dropped. An empty patch is a valid outcome.
    """
    lo = np.asarray(region[0], dtype=np.float64)
    hi = np.asarray(region[1], dtype=np.float64)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
        raise ValidationError("region must be ((x0,y0,z0), (x1,y1,z1)) with positive extent")
    if not resolution > 0:
        raise ValidationError("resolution must be positive")
    counts = np.floor((hi - lo) / resolution).astype(int)
    if np.prod(counts.clip(min=1), dtype=float) > 1e8:
        raise ValidationError("voxel budget exceeded (region volume / resolution^3 > 1e8)")
    if interval is None:
        interval = (float(lo[axis]), float(hi[axis]))
    if np.any(counts < 1):
        return SurfacePatch(np.empty((0, 3)), interval)

    axes = [lo[k] + (np.arange(counts[k]) + 0.5) * resolution for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    mean = model.predict(grid.reshape(-1, 3)).reshape(tuple(counts))

    ends_a = []
    ends_b = []
    for k in range(3):
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[k] = slice(None, -1)
        sl_b[k] = slice(1, None)
        cross = mean[tuple(sl_a)] * mean[tuple(sl_b)] < 0.0
        idx = np.argwhere(cross)
        if idx.size:
            jdx = idx.copy()
            jdx[:, k] += 1
            ends_a.append(idx)
            ends_b.append(jdx)
    if not ends_a:
        return SurfacePatch(np.empty((0, 3)), interval)

    ia = np.concatenate(ends_a)
    ib = np.concatenate(ends_b)
    pa = lo + (ia + 0.5) * resolution
    pb = lo + (ib + 0.5) * resolution
    fa = mean[tuple(ia.T)]
    mid = 0.5 * (pa + pb)
    fm = model.predict(mid)
    same_side = np.sign(fm) == np.sign(fa)
    points = np.where(same_side[:, None], 0.5 * (mid + pb), 0.5 * (pa + mid))
    points[fm == 0.0] = mid[fm == 0.0]

    _, var = model.predict(points, return_variance=True)
    points = points[var <= variance_fraction * model.sigma_f2_]
    return SurfacePatch(points, interval)


def _subtract_intervals(interval, covered):
    """Parts of half-open ``interval`` not covered by the sorted disjoint list."""
    lo, hi = interval
    remaining = [(lo, hi)]
    for c_lo, c_hi in covered:
        next_remaining = []
        for a, b in remaining:
            if c_hi <= a or c_lo >= b:
                next_remaining.append((a, b))
                continue
            if a < c_lo:
                next_remaining.append((a, c_lo))
            if c_hi < b:
                next_remaining.append((c_hi, b))
        remaining = next_remaining
    return remaining


def concatenate_patches(patches: Sequence[SurfacePatch], axis: int = 0) -> np.ndarray:
    """Merge patches along the exploration axis; earlier patches own overlaps.

    Each patch contributes only the points whose axis coordinate falls in the
    part of its half-open source interval not claimed by an earlier patch.
    """
    covered: list = []
    kept = []
    for patch in patches:
        own = _subtract_intervals(patch.source_interval, covered)
        if len(patch.points):
            coords = patch.points[:, axis]
            mask = np.zeros(len(coords), dtype=bool)
            for a, b in own:
                mask |= (coords >= a) & (coords < b)
            kept.append(patch.points[mask])
        lo, hi = patch.source_interval
        if hi > lo:
            merged = sorted(covered + [(lo, hi)])
            covered = []
            for seg in merged:
                if covered and seg[0] <= covered[-1][1]:
                    covered[-1] = (covered[-1][0], max(covered[-1][1], seg[1]))
                else:
                    covered.append(seg)
    return np.concatenate(kept, axis=0) if kept else np.empty((0, 3))


def chamfer_distance(a, b) -> float:
    """Symmetric mean squared nearest-neighbor distance between two clouds (mm^2)."""
    a = as_points(a, "a")
    b = as_points(b, "b")
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("chamfer distance is undefined for empty clouds")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float((d_ab ** 2).mean() + (d_ba ** 2).mean())
