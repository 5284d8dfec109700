"""Trust-region minimization of the negative log-likelihood with Fisher (or Hessian) curvature."""
import dataclasses
import logging
import typing as t

import numpy as np
import scipy.linalg

import bfsa.bfsa_core as bfsa_core
import bfsa.derivatives as derivatives
import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.likelihood as likelihood
import bfsa.parallel as parallel
import bfsa.saa as saa

FISHER_SAA = "fisher-saa"
FISHER_EXACT = "fisher-exact"
HESSIAN_EXACT = "hessian-exact"
CURVATURE_MODES = (FISHER_SAA, FISHER_EXACT, HESSIAN_EXACT)

GRAD_TOL = "grad_tol"
F_TOL = "f_tol"
MAX_ITERS = "max_iters"
RADIUS_COLLAPSE = "radius-collapse"
CURVATURE_INDEFINITE = "curvature-indefinite"

Model = t.Union[kernels.StationaryModel, kernels.NonstationaryModel]


@dataclasses.dataclass(frozen=True)
class TrustRegionConfig:
    delta0: float = 1.0
    delta_max: float = 100.0
    eta_accept: float = 0.1
    shrink: float = 0.25
    grow: float = 2.0
    max_iters: int = 50
    grad_tol: float = 1e-4
    f_tol: float = 1e-8
    f_tol_window: int = 3
    subproblem_tol: float = 1e-10
    subproblem_max_iters: int = 100
    min_radius: float = 1e-12
    saa_samples: int = 150
    saa_seed: int = 0
    redraw: bool = False
    curvature_mode: str = FISHER_SAA
    exact_fisher_at_mle: bool = True

    def __post_init__(self):
        if not 0 < self.eta_accept < 0.25:
            raise ValueError(f"eta_accept must lie in (0, 0.25), got {self.eta_accept}.")
        if not 0 < self.shrink < 1 < self.grow:
            raise ValueError(
                f"Need 0 < shrink < 1 < grow, got shrink={self.shrink}, grow={self.grow}."
            )
        if not 0 < self.delta0 <= self.delta_max:
            raise ValueError(
                f"Need 0 < delta0 <= delta_max, got {self.delta0} and {self.delta_max}."
            )
        if self.max_iters < 0 or self.subproblem_max_iters < 1 or self.f_tol_window < 1:
            raise ValueError("Iteration limits must be positive.")
        if self.saa_samples < 1:
            raise ValueError(f"saa_samples must be positive, got {self.saa_samples}.")
        if self.saa_seed < 0:
            raise ValueError(f"saa_seed must be nonnegative, got {self.saa_seed}.")
        if self.curvature_mode not in CURVATURE_MODES:
            raise ValueError(
                f"Unknown curvature mode {self.curvature_mode!r}; expected one of {CURVATURE_MODES}."
            )


@dataclasses.dataclass
class FitReport:
    theta_hat: np.ndarray
    parameter_names: t.List[str]
    free: t.List[int]
    nll_hat: float
    nll_trace: t.List[float]
    trial_trace: t.List[float]
    accepted: t.List[bool]
    grad_norm: float
    iterations: int
    sigma2_hat: float
    fisher_at_mle: np.ndarray
    termination: str
    curvature_mode: str

    def to_dict(self) -> dict:
        return {
            "theta_hat": [float(v) for v in self.theta_hat],
            "parameter_names": list(self.parameter_names),
            "free": [int(j) for j in self.free],
            "nll_hat": float(self.nll_hat),
            "nll_trace": [float(v) for v in self.nll_trace],
            "trial_trace": [float(v) for v in self.trial_trace],
            "accepted": [bool(v) for v in self.accepted],
            "grad_norm": float(self.grad_norm),
            "iterations": int(self.iterations),
            "sigma2_hat": float(self.sigma2_hat),
            "termination": self.termination,
            "curvature_mode": self.curvature_mode,
        }


def _model_value(g: np.ndarray, B: np.ndarray, step: np.ndarray) -> float:
    return float(g @ step + 0.5 * step @ B @ step)


def _cauchy_point(g: np.ndarray, B: np.ndarray, delta: float) -> np.ndarray:
    g_norm = np.linalg.norm(g)
    if g_norm == 0:
        return np.zeros_like(g)
    curvature = float(g @ B @ g)
    tau = 1.0 if curvature <= 0 else min(1.0, g_norm ** 3 / (delta * curvature))
    return -tau * delta * g / g_norm


def _boundary_step(
    g_rotated: np.ndarray,
    eigenvalues: np.ndarray,
    eigenvectors: np.ndarray,
    delta: float,
    tol: float,
    max_iters: int,
) -> t.Optional[np.ndarray]:
    """Newton iteration on 1/delta - 1/||p(lam)|| for lam above -min eigenvalue.

    Returns None when the iteration does not converge within max_iters.
    """
    floor = max(0.0, -eigenvalues[0])
    scale = max(1.0, np.abs(eigenvalues).max())
    g_norm = np.linalg.norm(g_rotated)
    low, high = floor, floor + g_norm / delta + scale * 1e-12

    singular = np.abs(eigenvalues + floor) <= 1e-12 * scale
    if np.all(np.abs(g_rotated[singular]) <= 1e-12 * max(g_norm, 1.0)):
        rest = ~singular
        partial = np.zeros_like(g_rotated)
        partial[rest] = -g_rotated[rest] / (eigenvalues[rest] + floor)
        partial_norm = np.linalg.norm(partial)
        if partial_norm <= delta:
            # Hard case: move along the bottom eigenvector to reach the boundary.
            tau = np.sqrt(max(delta ** 2 - partial_norm ** 2, 0.0))
            partial[np.flatnonzero(singular)[0]] = tau
            return eigenvectors @ partial

    lam = high
    for _ in range(max_iters):
        shifted = eigenvalues + lam
        step = -g_rotated / shifted
        step_norm = np.linalg.norm(step)
        if abs(step_norm - delta) <= tol * delta:
            return eigenvectors @ step
        if step_norm > delta:
            low = lam
        else:
            high = lam
        q_norm2 = float(np.sum(g_rotated ** 2 / shifted ** 3))
        lam_next = lam + (step_norm ** 2 / q_norm2) * (step_norm - delta) / delta
        if not low < lam_next < high:
            lam_next = (low + high) / 2.0
        lam = lam_next
    return None


def solve_subproblem(
    g, B, delta: float, tol: float = 1e-10, max_iters: int = 100
) -> np.ndarray:
    """Approximate minimizer of g^T p + 1/2 p^T B p subject to ||p|| <= delta.

    Never does worse than the Cauchy point, which is also the fallback when
    the root-finding iteration on (B + lam I) p = -g fails to converge.
    """
    g = np.asarray(g, dtype=float)
    B = np.asarray(B, dtype=float)
    if not delta > 0:
        raise ValueError(f"Trust radius must be positive, got {delta}.")
    if np.linalg.norm(g) == 0 and np.all(np.linalg.eigvalsh((B + B.T) / 2.0) >= 0):
        return np.zeros_like(g)

    eigenvalues, eigenvectors = scipy.linalg.eigh((B + B.T) / 2.0)
    g_rotated = eigenvectors.T @ g
    step = None
    if eigenvalues[0] > 0:
        newton = -eigenvectors @ (g_rotated / eigenvalues)
        if np.linalg.norm(newton) <= delta:
            step = newton
    if step is None:
        step = _boundary_step(g_rotated, eigenvalues, eigenvectors, delta, tol, max_iters)

    cauchy = _cauchy_point(g, B, delta)
    if step is None or _model_value(g, B, step) > _model_value(g, B, cauchy):
        return cauchy
    return step


class LikelihoodObjective:
    """nll and its curvature over the free subset of a model's parameters."""

    def __init__(
        self,
        model: Model,
        theta0,
        points,
        y,
        plan: geometry.PartitionPlan,
        config: TrustRegionConfig,
        free: t.Optional[t.Sequence[int]] = None,
    ):
        self.model = model
        self.theta0 = np.asarray(theta0, dtype=float)
        if len(self.theta0) != model.num_params:
            raise ValueError(
                f"Expected {model.num_params} initial parameters, got {len(self.theta0)}."
            )
        self.free = list(range(model.num_params)) if free is None else sorted(set(free))
        if not self.free or not all(0 <= j < model.num_params for j in self.free):
            raise ValueError(f"Invalid free parameter subset {free}.")
        self.points = np.asarray(points, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.plan = plan
        self.config = config

    def full_theta(self, values) -> np.ndarray:
        theta = self.theta0.copy()
        theta[self.free] = values
        return theta

    def state(self, values) -> likelihood.LikelihoodState:
        theta = self.full_theta(values)
        spec = self.model.spec(theta)
        return likelihood.likelihood_state(spec, self.points, self.y, self.plan, theta)

    def derivatives(self, state: likelihood.LikelihoodState):
        spec = self.model.spec(state.theta)
        return derivatives.d_assemble_all(spec, self.points, self.plan, state.K, self.free)

    def gradient_and_curvature(
        self, state: likelihood.LikelihoodState, iteration: int
    ) -> t.Tuple[np.ndarray, np.ndarray]:
        derivs = self.derivatives(state)
        mode = self.config.curvature_mode
        if mode == FISHER_SAA:
            seed = self.config.saa_seed + (iteration if self.config.redraw else 0)
            W = bfsa_core.sym_factorize(state.K)
            probes = saa.ProbeSet.rademacher(state.K.n, self.config.saa_samples, seed)
            products = saa.probe_products(W, derivs, probes)
            grad = saa.saa_grad(W, derivs, probes, state.K, self.y, products)
            return grad, saa.saa_fisher(W, derivs, probes, products)

        grad = likelihood.grad_exact(state.K, derivs, self.y)
        if mode == FISHER_EXACT:
            return grad, likelihood.fisher_exact(state.K, derivs)
        spec = self.model.spec(state.theta)
        second = likelihood.second_derivative_builder(
            spec, self.points, self.plan, state.K, self.free
        )
        return grad, likelihood.hessian_exact(state.K, derivs, second, self.y)

    def exact_fisher(self, state: likelihood.LikelihoodState) -> np.ndarray:
        return likelihood.fisher_exact(state.K, self.derivatives(state))

    def exact_gradient(self, state: likelihood.LikelihoodState) -> np.ndarray:
        return likelihood.grad_exact(state.K, self.derivatives(state), self.y)

    def profile_sigma2(self, theta) -> float:
        spec = self.model.unit_scale_spec(theta)
        K_unit = bfsa_core.assemble(spec, self.points, self.plan)
        return likelihood.profile_sigma2(K_unit, self.y)


def _trial_state(objective: LikelihoodObjective, values):
    try:
        return objective.state(values)
    except (bfsa_core.CholeskyFailure, kernels.ParameterError) as error:
        logging.warning(f"Trial point rejected: {error}")
        return None


def _trust_region(objective: LikelihoodObjective, config: TrustRegionConfig) -> FitReport:
    values = objective.theta0[objective.free].copy()
    try:
        state = objective.state(values)
    except bfsa_core.CholeskyFailure as error:
        raise error.with_theta(objective.full_theta(values)) from error

    delta = config.delta0
    nll_trace = [state.nll_value]
    trial_trace = []
    accepted = []
    small_decreases = 0
    termination = MAX_ITERS
    curvature = None
    iteration = 0
    refresh = True

    while True:
        if refresh:
            grad, curvature = objective.gradient_and_curvature(state, iteration)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < config.grad_tol * (1.0 + abs(state.nll_value)):
            termination = GRAD_TOL
            break
        if small_decreases >= config.f_tol_window:
            termination = F_TOL
            break
        if iteration >= config.max_iters:
            termination = MAX_ITERS
            break
        if delta < config.min_radius:
            termination = RADIUS_COLLAPSE
            break

        step = solve_subproblem(
            grad, curvature, delta, config.subproblem_tol, config.subproblem_max_iters
        )
        predicted = -_model_value(grad, curvature, step)
        if predicted <= 0 and config.curvature_mode == HESSIAN_EXACT:
            termination = CURVATURE_INDEFINITE
            break
        iteration += 1
        if predicted <= 0:
            trial_trace.append(float("nan"))
            accepted.append(False)
            nll_trace.append(state.nll_value)
            delta *= config.shrink
            refresh = False
            continue

        trial = _trial_state(objective, values + step)
        trial_value = np.inf if trial is None else trial.nll_value
        ratio = (state.nll_value - trial_value) / predicted
        on_boundary = np.linalg.norm(step) >= 0.99 * delta
        if ratio < 0.25:
            delta *= config.shrink
        elif ratio > 0.75 and on_boundary:
            delta = min(config.grow * delta, config.delta_max)

        is_accepted = trial is not None and ratio >= config.eta_accept
        trial_trace.append(float(trial_value))
        accepted.append(bool(is_accepted))
        logging.info(
            f"Iteration {iteration}: nll={state.nll_value:.6f} trial={trial_value:.6f} "
            f"ratio={ratio:.3f} radius={delta:.3e} accepted={is_accepted}"
        )
        if is_accepted:
            decrease = (state.nll_value - trial.nll_value) / max(1.0, abs(state.nll_value))
            small_decreases = small_decreases + 1 if decrease < config.f_tol else 0
            values = values + step
            state = trial
            refresh = True
        else:
            refresh = config.redraw and config.curvature_mode == FISHER_SAA
        nll_trace.append(state.nll_value)

    theta_hat = objective.full_theta(values)
    if config.exact_fisher_at_mle or curvature is None:
        fisher = objective.exact_fisher(state)
    else:
        fisher = curvature
    logging.info(
        f"Fit finished after {iteration} iterations ({termination}), nll={state.nll_value:.6f}"
    )
    return FitReport(
        theta_hat=theta_hat,
        parameter_names=objective.model.parameter_names(),
        free=list(objective.free),
        nll_hat=state.nll_value,
        nll_trace=nll_trace,
        trial_trace=trial_trace,
        accepted=accepted,
        grad_norm=grad_norm,
        iterations=iteration,
        sigma2_hat=objective.profile_sigma2(theta_hat),
        fisher_at_mle=fisher,
        termination=termination,
        curvature_mode=config.curvature_mode,
    )


def fit(
    model: Model,
    theta0,
    points,
    y,
    plan: geometry.PartitionPlan,
    config: t.Optional[TrustRegionConfig] = None,
    free: t.Optional[t.Sequence[int]] = None,
) -> FitReport:
    """Minimizes nll over the free parameters starting from theta0.

    The ratio test always uses the exact nll; only the gradient and curvature
    follow config.curvature_mode.
    """
    config = config or TrustRegionConfig()
    objective = LikelihoodObjective(model, theta0, points, y, plan, config, free)
    return _trust_region(objective, config)


@dataclasses.dataclass
class LocalFit:
    block: int
    centroid: np.ndarray
    theta: np.ndarray
    nll: float
    sigma2: float
    fallback: bool
    message: str = ""


def fit_local(
    points,
    y,
    blocks: t.Sequence[np.ndarray],
    nu: float = 1.0,
    nugget: float = 0.0,
    initial_range: t.Optional[float] = None,
    config: t.Optional[TrustRegionConfig] = None,
) -> t.List[LocalFit]:
    """Fits one constant anisotropy per block with dense exact likelihoods.

    Each block is modeled by a single basis center at its centroid, with the
    scale fixed at the block's mean square; a block whose fit fails keeps
    the isotropic starting point.
    """
    points = np.asarray(points, dtype=float)
    y = np.asarray(y, dtype=float)
    config = config or TrustRegionConfig(curvature_mode=FISHER_EXACT)
    centroids = geometry.block_centroids(points, blocks)
    if initial_range is None:
        extent = points.max(axis=0) - points.min(axis=0)
        initial_range = float(max(extent.max(), 1e-8)) / (2.0 * np.sqrt(len(blocks)))

    def fit_block(index: int) -> LocalFit:
        block_points = points[blocks[index]]
        block_y = y[blocks[index]]
        sigma2 = float(np.mean(block_y ** 2)) if np.any(block_y) else 1.0
        model = kernels.NonstationaryModel(
            centers=centroids[index][None, :], width=1.0, nu=nu, sigma2=sigma2, nugget=nugget
        )
        theta0 = model.isotropic_theta(initial_range)
        plan = geometry.build_plan(block_points, 1, 0)
        try:
            report = fit(model, theta0, block_points, block_y, plan, config)
            return LocalFit(index, centroids[index], report.theta_hat, report.nll_hat, sigma2, False)
        except (np.linalg.LinAlgError, ValueError) as error:
            logging.warning(f"Local fit for block {index} failed, using isotropic start: {error}")
            return LocalFit(index, centroids[index], theta0, float("nan"), sigma2, True, str(error))

    return parallel.thread_map(fit_block, range(len(blocks)), desc="Fitting local blocks")
