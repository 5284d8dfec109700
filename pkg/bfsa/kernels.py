"""Covariance kernels and their parameter derivatives.

Two kernel variants are supported:

- the stationary isotropic Matérn, parameterized by theta = [sigma2, rho];
- the nonstationary Paciorek-Schervish kernel, whose local anisotropy
  Lambda(x) is a normalized radial-basis blend of matrices Lambda_i = L_i L_i^T,
  parameterized by theta = [log l11, l21, log l22] for every basis center.

The matrix builders (kernel_matrix, kernel_grad_matrix, kernel_hess_matrix) are
vectorized over point sets and are what assembly uses. The entry functions wrap
them for single pairs.
"""
import dataclasses
import functools
import typing as t

import numpy as np
import scipy.spatial.distance
import scipy.special

STATIONARY = "matern"
PACIOREK_SCHERVISH = "paciorek-schervish"
VARIANTS = (STATIONARY, PACIOREK_SCHERVISH)

WEIGHT_FLUSH = 1e-300
PARAMS_PER_CENTER = 3


class ParameterError(ValueError):
    """Kernel parameters outside their valid domain."""


@dataclasses.dataclass(frozen=True)
class MaternParams:
    sigma2: float = 1.0
    rho: float = 1.0
    nu: float = 1.0

    def __post_init__(self):
        for name in ("sigma2", "rho", "nu"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ParameterError(f"Matern {name} must be positive, got {value}.")


@functools.lru_cache(maxsize=32)
def _matern_normalizer(nu: float) -> float:
    return 2.0 ** (1.0 - nu) / scipy.special.gamma(nu)


def _bessel_k(order: float, s: np.ndarray) -> np.ndarray:
    """Modified Bessel function of the second kind, K_{-v} = K_v.

    Orders 0 and 1 go through the dedicated Cephes routines (polynomial
    approximation below argument 2, asymptotic form above).
    """
    order = abs(order)
    if order == 0.0:
        return scipy.special.k0(s)
    if order == 1.0:
        return scipy.special.k1(s)
    return scipy.special.kv(order, s)


def unit_matern(q: np.ndarray, nu: float, order: int = 0) -> np.ndarray:
    """Unit-variance unit-range Matérn as a function of squared distance q.

    order 1 and 2 give the first and second derivative in q. Entries with
    q == 0 evaluate to 1 (order 0) or 0 (derivatives); every caller multiplies
    derivatives by a factor that vanishes there.
    """
    q = np.asarray(q, dtype=float)
    out = np.ones_like(q) if order == 0 else np.zeros_like(q)
    positive = q > 0
    if not np.any(positive):
        return out
    s = 2.0 * np.sqrt(nu * q[positive])
    out[positive] = (
        _matern_normalizer(nu)
        * (-2.0 * nu) ** order
        * s ** (nu - order)
        * _bessel_k(nu - order, s)
    )
    return out


def matern_iso(r, params: MaternParams):
    """Stationary isotropic Matérn covariance at distance r."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("Distances must be nonnegative.")
    value = params.sigma2 * unit_matern((r / params.rho) ** 2, params.nu)
    if value.ndim == 0:
        return float(value)
    return value


@dataclasses.dataclass(frozen=True, eq=False)
class AnisotropyField:
    """Normalized squared-exponential blend of per-center anisotropy matrices."""

    centers: np.ndarray
    width_c: float
    coeffs: np.ndarray

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "coeffs", coeffs)
        if len(centers) < 1 or centers.shape[1] != 2:
            raise ParameterError("An anisotropy field needs at least one 2-d center.")
        if coeffs.shape != (len(centers), PARAMS_PER_CENTER):
            raise ParameterError(
                f"Expected {len(centers)} coefficient triples, got shape {coeffs.shape}."
            )
        if not np.all(np.isfinite(coeffs)):
            raise ParameterError("Anisotropy coefficients must be finite.")
        if not self.width_c > 0:
            raise ParameterError(f"Basis width must be positive, got {self.width_c}.")

    @classmethod
    def from_theta(cls, centers, width_c: float, theta) -> "AnisotropyField":
        theta = np.asarray(theta, dtype=float)
        return cls(centers, width_c, theta.reshape(-1, PARAMS_PER_CENTER))

    @property
    def num_centers(self) -> int:
        return len(self.centers)

    @property
    def theta(self) -> np.ndarray:
        return self.coeffs.reshape(-1).copy()

    def cholesky_factors(self) -> np.ndarray:
        factors = np.zeros((self.num_centers, 2, 2))
        factors[:, 0, 0] = np.exp(self.coeffs[:, 0])
        factors[:, 1, 0] = self.coeffs[:, 1]
        factors[:, 1, 1] = np.exp(self.coeffs[:, 2])
        return factors

    def matrices(self) -> np.ndarray:
        """The per-center matrices Lambda_i, shape (m, 2, 2)."""
        factors = self.cholesky_factors()
        return factors @ np.transpose(factors, (0, 2, 1))

    def weights(self, points) -> np.ndarray:
        """Partition-of-unity weights phi_i(x), shape (n, m)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        squared = scipy.spatial.distance.cdist(points, self.centers, "sqeuclidean")
        raw = np.exp(-squared / self.width_c ** 2)
        raw[raw < WEIGHT_FLUSH] = 0.0
        totals = raw.sum(axis=1)
        stranded = totals == 0.0
        if np.any(stranded):
            nearest = np.argmin(squared[stranded], axis=1)
            raw[stranded] = 0.0
            raw[np.flatnonzero(stranded), nearest] = 1.0
            totals[stranded] = 1.0
        return raw / totals[:, None]

    def components_at(self, points) -> t.Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Entries (11, 12, 22) of Lambda(x) at each point."""
        weights = self.weights(points)
        matrices = self.matrices()
        return (
            weights @ matrices[:, 0, 0],
            weights @ matrices[:, 0, 1],
            weights @ matrices[:, 1, 1],
        )

    def at(self, points) -> np.ndarray:
        a11, a12, a22 = self.components_at(points)
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

    def derivative_components(self, center: int, which: int) -> t.Tuple[float, float, float]:
        """d Lambda_center / d theta_(center, which) as (11, 12, 22) entries."""
        log11, l21, log22 = self.coeffs[center]
        l11, l22 = np.exp(log11), np.exp(log22)
        if which == 0:
            return 2.0 * l11 ** 2, l11 * l21, 0.0
        if which == 1:
            return 0.0, l11, 2.0 * l21
        return 0.0, 0.0, 2.0 * l22 ** 2

    def second_derivative_components(
        self, center: int, first: int, second: int
    ) -> t.Tuple[float, float, float]:
        log11, l21, log22 = self.coeffs[center]
        l11, l22 = np.exp(log11), np.exp(log22)
        pair = tuple(sorted((first, second)))
        if pair == (0, 0):
            return 4.0 * l11 ** 2, l11 * l21, 0.0
        if pair == (0, 1):
            return 0.0, l11, 0.0
        if pair == (1, 1):
            return 0.0, 0.0, 2.0
        if pair == (2, 2):
            return 0.0, 0.0, 4.0 * l22 ** 2
        return 0.0, 0.0, 0.0


def anisotropy_at(field: AnisotropyField, x) -> np.ndarray:
    """Lambda(x) for a single coordinate pair."""
    return field.at(np.asarray(x, dtype=float)[None, :])[0]


@dataclasses.dataclass(frozen=True, eq=False)
class KernelSpec:
    variant: str
    matern: MaternParams
    field: t.Optional[AnisotropyField] = None
    nugget: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"Unknown kernel variant {self.variant!r}.")
        if self.variant == PACIOREK_SCHERVISH and self.field is None:
            raise ParameterError("The Paciorek-Schervish kernel needs an anisotropy field.")
        if self.variant == STATIONARY and self.field is not None:
            raise ParameterError("The stationary kernel does not take an anisotropy field.")
        if not self.nugget >= 0:
            raise ParameterError(f"Nugget must be nonnegative, got {self.nugget}.")

    @property
    def num_params(self) -> int:
        if self.variant == STATIONARY:
            return 2
        return PARAMS_PER_CENTER * self.field.num_centers


def _sym_inverse(a11, a12, a22):
    det = a11 * a22 - a12 ** 2
    return a22 / det, -a12 / det, a11 / det


def _trace_sym(x, e) -> np.ndarray:
    """tr(X E) for symmetric 2x2 X and E given by their (11, 12, 22) entries."""
    return x[0] * e[0] + 2.0 * x[1] * e[1] + x[2] * e[2]


def _trace_sandwich(inverse, e1, e2) -> np.ndarray:
    """tr(X^-1 E1 X^-1 E2) given the entries of X^-1."""
    i11, i12, i22 = inverse
    m11 = i11 * e1[0] + i12 * e1[1]
    m12 = i11 * e1[1] + i12 * e1[2]
    m21 = i12 * e1[0] + i22 * e1[1]
    m22 = i12 * e1[1] + i22 * e1[2]
    n11 = i11 * e2[0] + i12 * e2[1]
    n12 = i11 * e2[1] + i12 * e2[2]
    n21 = i12 * e2[0] + i22 * e2[1]
    n22 = i12 * e2[1] + i22 * e2[2]
    return m11 * n11 + m12 * n21 + m21 * n12 + m22 * n22


class _NonstationaryPairs:
    """Pairwise quantities of the Paciorek-Schervish kernel shared by its derivatives."""

    def __init__(self, spec: KernelSpec, xa: np.ndarray, xb: np.ndarray):
        field = spec.field
        self.sigma2 = spec.matern.sigma2
        self.nu = spec.matern.nu
        self.field = field
        self.weights_a = field.weights(xa)
        self.weights_b = field.weights(xb)

        a = tuple(c[:, None] for c in field.components_at(xa))
        b = tuple(c[None, :] for c in field.components_at(xb))
        s = tuple((ac + bc) / 2.0 for ac, bc in zip(a, b))
        det_a = a[0] * a[2] - a[1] ** 2
        det_b = b[0] * b[2] - b[1] ** 2
        det_s = s[0] * s[2] - s[1] ** 2
        if np.any(det_s <= 0):
            raise ParameterError("Averaged anisotropy matrix is singular; the field is degenerate.")

        self.inv_a = _sym_inverse(*a)
        self.inv_b = _sym_inverse(*b)
        self.inv_s = _sym_inverse(*s)

        d1 = xa[:, 0, None] - xb[None, :, 0]
        d2 = xa[:, 1, None] - xb[None, :, 1]
        i11, i12, i22 = self.inv_s
        self.v1 = i11 * d1 + i12 * d2
        self.v2 = i12 * d1 + i22 * d2
        self.q = np.maximum(d1 * self.v1 + d2 * self.v2, 0.0)

        self.prefactor = det_a ** 0.25 * det_b ** 0.25 / np.sqrt(det_s)
        self.f0 = unit_matern(self.q, self.nu, 0)
        self._f1 = None
        self._f2 = None

    @property
    def f1(self):
        if self._f1 is None:
            self._f1 = unit_matern(self.q, self.nu, 1)
        return self._f1

    @property
    def f2(self):
        if self._f2 is None:
            self._f2 = unit_matern(self.q, self.nu, 2)
        return self._f2

    def value(self) -> np.ndarray:
        return self.sigma2 * self.prefactor * self.f0

    def _split(self, j: int) -> t.Tuple[int, int]:
        return divmod(j, PARAMS_PER_CENTER)

    def _first_terms(self, j: int):
        center, which = self._split(j)
        e = self.field.derivative_components(center, which)
        wa = self.weights_a[:, center][:, None]
        wb = self.weights_b[:, center][None, :]
        ws = (wa + wb) / 2.0
        dlogp = (
            0.25 * wa * _trace_sym(self.inv_a, e)
            + 0.25 * wb * _trace_sym(self.inv_b, e)
            - 0.5 * ws * _trace_sym(self.inv_s, e)
        )
        quadratic = e[0] * self.v1 ** 2 + 2.0 * e[1] * self.v1 * self.v2 + e[2] * self.v2 ** 2
        dq = -ws * quadratic
        return center, e, wa, wb, ws, dlogp, dq

    def gradient(self, j: int) -> np.ndarray:
        center, _, wa, wb, _, dlogp, dq = self._first_terms(j)
        if not (np.any(wa) or np.any(wb)):
            return np.zeros_like(self.q)
        return self.sigma2 * self.prefactor * (self.f0 * dlogp + self.f1 * dq)

    def hessian(self, j: int, k: int) -> np.ndarray:
        center_j, e_j, wa_j, wb_j, ws_j, dlogp_j, dq_j = self._first_terms(j)
        center_k, e_k, wa_k, wb_k, ws_k, dlogp_k, dq_k = self._first_terms(k)
        if not (np.any(wa_j) or np.any(wb_j)) or not (np.any(wa_k) or np.any(wb_k)):
            return np.zeros_like(self.q)

        d2logp = (
            -0.25 * wa_j * wa_k * _trace_sandwich(self.inv_a, e_j, e_k)
            - 0.25 * wb_j * wb_k * _trace_sandwich(self.inv_b, e_j, e_k)
            + 0.5 * ws_j * ws_k * _trace_sandwich(self.inv_s, e_j, e_k)
        )
        a1 = e_j[0] * self.v1 + e_j[1] * self.v2
        a2 = e_j[1] * self.v1 + e_j[2] * self.v2
        b1 = e_k[0] * self.v1 + e_k[1] * self.v2
        b2 = e_k[1] * self.v1 + e_k[2] * self.v2
        i11, i12, i22 = self.inv_s
        cross = b1 * (i11 * a1 + i12 * a2) + b2 * (i12 * a1 + i22 * a2)
        d2q = 2.0 * ws_j * ws_k * cross

        if center_j == center_k:
            _, which_j = self._split(j)
            _, which_k = self._split(k)
            e_jk = self.field.second_derivative_components(center_j, which_j, which_k)
            wa, wb, ws = wa_j, wb_j, ws_j
            d2logp = d2logp + (
                0.25 * wa * _trace_sym(self.inv_a, e_jk)
                + 0.25 * wb * _trace_sym(self.inv_b, e_jk)
                - 0.5 * ws * _trace_sym(self.inv_s, e_jk)
            )
            quadratic = (
                e_jk[0] * self.v1 ** 2
                + 2.0 * e_jk[1] * self.v1 * self.v2
                + e_jk[2] * self.v2 ** 2
            )
            d2q = d2q - ws * quadratic

        return (
            self.sigma2
            * self.prefactor
            * (
                (dlogp_j * dlogp_k + d2logp) * self.f0
                + self.f1 * (dlogp_j * dq_k + dlogp_k * dq_j + d2q)
                + self.f2 * dq_j * dq_k
            )
        )


class _StationaryPairs:
    """Pairwise quantities of the stationary Matérn with theta = [sigma2, rho]."""

    def __init__(self, spec: KernelSpec, xa: np.ndarray, xb: np.ndarray):
        self.sigma2 = spec.matern.sigma2
        self.rho = spec.matern.rho
        self.nu = spec.matern.nu
        squared = scipy.spatial.distance.cdist(xa, xb, "sqeuclidean")
        self.q = squared / self.rho ** 2
        self.f0 = unit_matern(self.q, self.nu, 0)

    def value(self) -> np.ndarray:
        return self.sigma2 * self.f0

    def gradient(self, j: int) -> np.ndarray:
        if j == 0:
            return self.f0.copy()
        dq = -2.0 * self.q / self.rho
        return self.sigma2 * unit_matern(self.q, self.nu, 1) * dq

    def hessian(self, j: int, k: int) -> np.ndarray:
        j, k = sorted((j, k))
        if (j, k) == (0, 0):
            return np.zeros_like(self.q)
        f1 = unit_matern(self.q, self.nu, 1)
        dq = -2.0 * self.q / self.rho
        if (j, k) == (0, 1):
            return f1 * dq
        d2q = 6.0 * self.q / self.rho ** 2
        return self.sigma2 * (unit_matern(self.q, self.nu, 2) * dq ** 2 + f1 * d2q)


def _pairs(spec: KernelSpec, xa: np.ndarray, xb: np.ndarray):
    if spec.variant == STATIONARY:
        return _StationaryPairs(spec, xa, xb)
    return _NonstationaryPairs(spec, xa, xb)


def _as_points(x) -> np.ndarray:
    points = np.asarray(x, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 2)
    return points


def _check_index(spec: KernelSpec, j: int):
    if not 0 <= j < spec.num_params:
        raise IndexError(f"Parameter index {j} out of range for {spec.num_params} parameters.")


def kernel_matrix(spec: KernelSpec, xa, xb=None) -> np.ndarray:
    """Covariance between two point sets.

    With xb omitted the rows and columns index the same observations and the
    nugget is added to the diagonal.
    """
    xa = _as_points(xa)
    same = xb is None
    xb = xa if same else _as_points(xb)
    if len(xa) == 0 or len(xb) == 0:
        return np.zeros((len(xa), len(xb)))
    value = _pairs(spec, xa, xb).value()
    if same:
        value = (value + value.T) / 2.0
        value[np.diag_indices_from(value)] += spec.nugget
    return value


def kernel_grad_matrix(spec: KernelSpec, j: int, xa, xb=None) -> np.ndarray:
    """d covariance / d theta_j between two point sets."""
    _check_index(spec, j)
    xa = _as_points(xa)
    same = xb is None
    xb = xa if same else _as_points(xb)
    if len(xa) == 0 or len(xb) == 0:
        return np.zeros((len(xa), len(xb)))
    value = _pairs(spec, xa, xb).gradient(j)
    if same:
        value = (value + value.T) / 2.0
    return value


def kernel_hess_matrix(spec: KernelSpec, j: int, k: int, xa, xb=None) -> np.ndarray:
    """d^2 covariance / d theta_j d theta_k between two point sets."""
    _check_index(spec, j)
    _check_index(spec, k)
    xa = _as_points(xa)
    same = xb is None
    xb = xa if same else _as_points(xb)
    if len(xa) == 0 or len(xb) == 0:
        return np.zeros((len(xa), len(xb)))
    value = _pairs(spec, xa, xb).hessian(j, k)
    if same:
        value = (value + value.T) / 2.0
    return value


def kernel_eval(spec: KernelSpec, xi, xj, same_index: bool = False) -> float:
    """Covariance between two locations; same_index marks a diagonal entry."""
    xi, xj = _as_points(xi), _as_points(xj)
    value = float(_pairs(spec, xi, xj).value()[0, 0])
    if same_index:
        value += spec.nugget
    return value


def kernel_grad_entry(spec: KernelSpec, xi, xj, j: int) -> float:
    return float(kernel_grad_matrix(spec, j, xi, _as_points(xj))[0, 0])


def kernel_hess_entry(spec: KernelSpec, xi, xj, j: int, k: int) -> float:
    return float(kernel_hess_matrix(spec, j, k, xi, _as_points(xj))[0, 0])


def correlation_map(spec: KernelSpec, reference, points) -> np.ndarray:
    """Correlation between a reference location and each point.

    Both variants have variance sigma2 at every location, so this is the
    covariance row divided by sigma2 (the nugget is excluded).
    """
    row = kernel_matrix(spec, _as_points(reference), _as_points(points))[0]
    return row / spec.matern.sigma2


def default_width(centers) -> float:
    """Half the minimum distance between basis centers (1.0 for a single center)."""
    centers = _as_points(centers)
    if len(centers) < 2:
        return 1.0
    distances = scipy.spatial.distance.pdist(centers)
    smallest = float(distances.min())
    if smallest <= 0:
        raise ParameterError("Basis centers must be distinct.")
    return smallest / 2.0


@dataclasses.dataclass(frozen=True, eq=False)
class NonstationaryModel:
    """Paciorek-Schervish model over a radial-basis anisotropy field.

    theta holds the log-Cholesky coefficients of every center; sigma2 is held
    fixed while fitting and profiled out afterwards.
    """

    centers: np.ndarray
    width: float
    nu: float = 1.0
    sigma2: float = 1.0
    nugget: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "centers", _as_points(self.centers))

    @property
    def num_params(self) -> int:
        return PARAMS_PER_CENTER * len(self.centers)

    def parameter_names(self) -> t.List[str]:
        names = []
        for i in range(len(self.centers)):
            names += [f"log_l11_{i}", f"l21_{i}", f"log_l22_{i}"]
        return names

    def spec(self, theta) -> KernelSpec:
        field = AnisotropyField.from_theta(self.centers, self.width, theta)
        return KernelSpec(
            PACIOREK_SCHERVISH, MaternParams(self.sigma2, 1.0, self.nu), field, self.nugget
        )

    def unit_scale_spec(self, theta) -> KernelSpec:
        return dataclasses.replace(self, sigma2=1.0).spec(theta)

    def isotropic_theta(self, length: float) -> np.ndarray:
        """Coefficients making every Lambda_i = length^2 I."""
        if not length > 0:
            raise ParameterError(f"Initial range must be positive, got {length}.")
        triple = [np.log(length), 0.0, np.log(length)]
        return np.tile(triple, len(self.centers))


@dataclasses.dataclass(frozen=True)
class StationaryModel:
    """Stationary Matérn with theta = [sigma2, rho]."""

    nu: float = 1.0
    nugget: float = 0.0

    num_params = 2

    def parameter_names(self) -> t.List[str]:
        return ["sigma2", "rho"]

    def spec(self, theta) -> KernelSpec:
        sigma2, rho = (float(v) for v in theta)
        return KernelSpec(STATIONARY, MaternParams(sigma2, rho, self.nu), None, self.nugget)

    def unit_scale_spec(self, theta) -> KernelSpec:
        return self.spec([1.0, theta[1]])


def model_to_dict(model, theta, sigma2: t.Optional[float] = None) -> dict:
    """Serializable description of a model and its parameters.

    sigma2, when given, replaces the nonstationary model's fixed scale (for
    example by its profiled estimate).
    """
    theta = [float(v) for v in theta]
    if isinstance(model, StationaryModel):
        return {
            "variant": STATIONARY,
            "nu": float(model.nu),
            "nugget": float(model.nugget),
            "parameter_names": model.parameter_names(),
            "theta": theta,
        }
    return {
        "variant": PACIOREK_SCHERVISH,
        "nu": float(model.nu),
        "nugget": float(model.nugget),
        "sigma2": float(model.sigma2 if sigma2 is None else sigma2),
        "centers": model.centers.tolist(),
        "width": float(model.width),
        "parameter_names": model.parameter_names(),
        "theta": theta,
    }


def model_from_dict(data: t.Mapping[str, t.Any]):
    """Inverse of model_to_dict: returns (model, theta)."""
    try:
        variant = data["variant"]
        theta = np.asarray(data["theta"], dtype=float)
        if variant == STATIONARY:
            model = StationaryModel(nu=float(data["nu"]), nugget=float(data["nugget"]))
        elif variant == PACIOREK_SCHERVISH:
            model = NonstationaryModel(
                centers=np.asarray(data["centers"], dtype=float),
                width=float(data["width"]),
                nu=float(data["nu"]),
                sigma2=float(data["sigma2"]),
                nugget=float(data["nugget"]),
            )
        else:
            raise ParameterError(f"Unknown kernel variant {variant!r}.")
    except KeyError as error:
        raise ValueError(f"Model description is missing {error}.") from None
    if len(theta) != model.num_params:
        raise ParameterError(f"Expected {model.num_params} parameters, got {len(theta)}.")
    model.spec(theta)
    return model, theta
