"""Synthetic Gaussian fields for experiments and tests, deterministic per seed."""
import dataclasses
import logging
import typing as t

import numpy as np

import bfsa.bfsa_core as bfsa_core
import bfsa.config as config
import bfsa.frames as frames
import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.predict as predict


@dataclasses.dataclass(frozen=True, eq=False)
class SyntheticField:
    dataset: frames.Dataset
    model: t.Union[kernels.StationaryModel, kernels.NonstationaryModel]
    theta: np.ndarray

    def truth(self) -> dict:
        return kernels.model_to_dict(self.model, self.theta)


def make_points(n: int, layout: str, width: float, height: float, rng: np.random.Generator):
    if n < 1:
        raise ValueError(f"Need at least one point, got {n}.")
    if layout == "uniform":
        return rng.uniform(0.0, 1.0, size=(n, 2)) * [width, height]
    if layout == "grid":
        side = int(np.ceil(np.sqrt(n)))
        xs, ys = np.meshgrid(np.linspace(0.0, width, side), np.linspace(0.0, height, side))
        return np.column_stack([xs.ravel(), ys.ravel()])[:n]
    raise ValueError(f"Unknown layout {layout!r}.")


def center_points(points, num_centers: int) -> np.ndarray:
    """Basis centers at the centroids of a k-d tree partition of the points."""
    blocks = geometry.kdtree_partition(points, num_centers)
    return geometry.block_centroids(points, blocks)


def random_anisotropy_theta(
    num_centers: int, length: float, spread: float, rng: np.random.Generator
) -> np.ndarray:
    """Log-Cholesky coefficients scattered around the isotropic field length^2 I."""
    noise = rng.standard_normal((num_centers, kernels.PARAMS_PER_CENTER))
    theta = np.empty_like(noise)
    theta[:, 0] = np.log(length) + spread * noise[:, 0]
    theta[:, 1] = length * spread * noise[:, 1]
    theta[:, 2] = np.log(length) + spread * noise[:, 2]
    return theta.reshape(-1)


def holdout_mask(points, rectangle: t.Optional[t.Sequence[float]]) -> np.ndarray:
    """Points inside [x_min, y_min, x_max, y_max], the synthetic cloud cover."""
    points = np.asarray(points, dtype=float)
    if rectangle is None:
        return np.zeros(len(points), dtype=int)
    x_min, y_min, x_max, y_max = rectangle
    inside = (
        (points[:, 0] >= x_min)
        & (points[:, 0] <= x_max)
        & (points[:, 1] >= y_min)
        & (points[:, 1] <= y_max)
    )
    return inside.astype(int)


def simulate_field(
    spec: kernels.KernelSpec, points, num_blocks: int, num_landmarks: int, seed: int
) -> np.ndarray:
    """One draw from N(0, K) for the two-level covariance of the points."""
    plan = geometry.build_plan(points, num_blocks, num_landmarks)
    K = bfsa_core.assemble(spec, points, plan)
    return predict.simulate_unconditional(K, seed, 1)[0]


def synthesize(settings: config.SyntheticConfig) -> SyntheticField:
    rng = np.random.default_rng(settings.seed)
    points = make_points(settings.n, settings.layout, settings.width, settings.height, rng)
    if settings.variant == kernels.STATIONARY:
        model = kernels.StationaryModel(nu=settings.nu, nugget=settings.nugget)
        theta = np.array([settings.sigma2, settings.rho])
    else:
        centers = center_points(points, settings.num_centers)
        model = kernels.NonstationaryModel(
            centers=centers,
            width=kernels.default_width(centers),
            nu=settings.nu,
            sigma2=settings.sigma2,
            nugget=settings.nugget,
        )
        theta = random_anisotropy_theta(
            settings.num_centers, settings.rho, settings.anisotropy_spread, rng
        )

    values = simulate_field(
        model.spec(theta), points, settings.num_blocks, settings.num_landmarks, settings.seed
    )
    mask = holdout_mask(points, settings.holdout)
    logging.info(
        f"Simulated a {settings.variant} field at {settings.n} points, {int(mask.sum())} held out"
    )
    dataset = frames.Dataset.from_arrays(points, values, mask)
    return SyntheticField(dataset, model, theta)
