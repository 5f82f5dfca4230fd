#!/usr/bin/env python3
"""
dCMF Hyperopt - Multi-Task Bayesian Optimization
================================================

Bayesian optimization of dCMF hyperparameters. The surrogate is a multi-task
GP over (hyperparameter point, loss term) pairs with the intrinsic
coregionalization kernel K_t (x) K_p: a squared-exponential input kernel and a
task kernel K_t = G G^T parameterized by its lower-triangular Cholesky factor.
Proposals maximize expected improvement computed from the summed task
posteriors against the best observed 1-norm of the loss vector.

Baselines: a single GP on the scalarized loss, and uniform random search.

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from tqdm import tqdm

from dcmf_errors import DCMFError, DecompositionError, DomainError, ShapeError, SurrogateError
from dcmf_numerics import cholesky_with_jitter, derive_rng, std_normal

logger = logging.getLogger(__name__)

HP_KINDS = ("continuous", "log-continuous", "integer", "categorical")
SURROGATE_KINDS = ("mtgp", "gp-on-scalar", "random")
SIGMA_MODES = ("sum_std", "sqrt_sum_var")
SOLVERS = ("eigen", "cholesky")

DEFAULT_CANDIDATES = 1000
CANDIDATES_ENV = "DCMF_N_CANDIDATES"
G_DIAG_MIN = 1e-6
BASE_JITTER = 1e-10

HyperParams = Dict[str, Any]


# ------------------------------------------------------------------ search space

@dataclass(frozen=True)
class Hyperparameter:
    """One searchable dimension"""
    name: str
    kind: str
    low: Optional[float] = None
    high: Optional[float] = None
    choices: Tuple[Any, ...] = ()

    def __post_init__(self):
        if self.kind not in HP_KINDS:
            raise DomainError(f"{self.name}: kind must be one of {HP_KINDS}, got '{self.kind}'")
        if self.kind == "categorical":
            object.__setattr__(self, "choices", tuple(self.choices))
            if not self.choices:
                raise DomainError(f"{self.name}: categorical needs at least one choice")
            return
        if self.low is None or self.high is None:
            raise DomainError(f"{self.name}: bounds are required")
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low > self.high:
            raise DomainError(f"{self.name}: bounds must be finite and ordered, got [{self.low}, {self.high}]")
        if self.kind == "log-continuous" and self.low <= 0:
            raise DomainError(f"{self.name}: log-scaled bounds must be positive")

    @property
    def width(self) -> int:
        return len(self.choices) if self.kind == "categorical" else 1

    def encode(self, value) -> np.ndarray:
        if self.kind == "categorical":
            if value not in self.choices:
                raise DomainError(f"{self.name}: '{value}' is not one of {list(self.choices)}")
            out = np.zeros(self.width)
            out[self.choices.index(value)] = 1.0
            return out
        if self.high == self.low:
            return np.zeros(1)
        if self.kind == "log-continuous":
            t = (math.log(value) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        else:
            t = (value - self.low) / (self.high - self.low)
        return np.array([min(max(t, 0.0), 1.0)])

    def decode(self, coords: np.ndarray):
        coords = np.asarray(coords, dtype=np.float64)
        if self.kind == "categorical":
            return self.choices[int(np.argmax(coords))]
        t = float(min(max(coords[0], 0.0), 1.0))
        if t >= 1.0:
            value = self.high
        elif self.kind == "log-continuous":
            value = self.low * (self.high / self.low) ** t
        else:
            value = self.low + t * (self.high - self.low)
        if self.kind == "integer":
            return int(min(max(math.floor(value + 0.5), self.low), self.high))
        return float(min(max(value, self.low), self.high))

    def as_dict(self) -> Dict:
        if self.kind == "categorical":
            return {"kind": self.kind, "choices": list(self.choices)}
        return {"kind": self.kind, "bounds": [self.low, self.high]}


@dataclass(frozen=True)
class SearchSpace:
    """Hyperparameters in declaration order; encoded points live in [0,1]^B'"""
    params: Tuple[Hyperparameter, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        if not self.params:
            raise DomainError("search space is empty")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise DomainError("search space has duplicate hyperparameter names")

    @classmethod
    def from_dict(cls, spec: Dict[str, Dict]) -> "SearchSpace":
        params = []
        for name, entry in spec.items():
            bounds = entry.get("bounds", [None, None])
            params.append(Hyperparameter(name, entry.get("kind", "continuous"), bounds[0], bounds[1],
                                         tuple(entry.get("choices", ()))))
        return cls(tuple(params))

    def as_dict(self) -> Dict[str, Dict]:
        return {p.name: p.as_dict() for p in self.params}

    @property
    def names(self) -> List[str]:
        return [p.name for p in self.params]

    @property
    def dim(self) -> int:
        return sum(p.width for p in self.params)

    def _slices(self):
        offset = 0
        for p in self.params:
            yield p, slice(offset, offset + p.width)
            offset += p.width

    def encode(self, hp: HyperParams) -> np.ndarray:
        missing = [p.name for p in self.params if p.name not in hp]
        if missing:
            raise DomainError(f"hyperparameters missing: {missing}")
        return np.concatenate([p.encode(hp[p.name]) for p in self.params])

    def decode(self, x: np.ndarray) -> HyperParams:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ShapeError("encoded point has the wrong width", x.shape, (self.dim,))
        return {p.name: p.decode(x[s]) for p, s in self._slices()}

    def snap(self, X: np.ndarray) -> np.ndarray:
        """Project raw unit-cube samples onto encodings of valid points"""
        X = np.atleast_2d(X)
        return np.vstack([self.encode(self.decode(row)) for row in X])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n points drawn uniformly over the encoded space, snapped to valid encodings"""
        return self.snap(rng.uniform(0.0, 1.0, size=(n, self.dim)))


# ------------------------------------------------------------------ surrogate

@dataclass
class SurrogateState:
    """Observations plus ICM kernel parameters"""
    X: np.ndarray
    Y: np.ndarray
    lengthscales: np.ndarray
    signal_variance: float = 1.0
    noise_variance: float = 1e-4
    G: Optional[np.ndarray] = None
    jitter: float = BASE_JITTER
    normalize: bool = True
    task_names: Tuple[str, ...] = ()

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X.shape[0] != self.Y.shape[0]:
            raise ShapeError("observation count mismatch", self.X.shape, self.Y.shape)
        self.lengthscales = np.broadcast_to(np.asarray(self.lengthscales, dtype=np.float64),
                                            (self.X.shape[1],)).copy()
        if self.G is None:
            self.G = np.eye(self.n_tasks)
        self.G = np.tril(np.asarray(self.G, dtype=np.float64))
        if self.G.shape != (self.n_tasks, self.n_tasks):
            raise ShapeError("task factor does not match task count", self.G.shape, (self.n_tasks,) * 2)

    @classmethod
    def create(cls, X, Y, lengthscale: float = 0.5, **kwargs) -> "SurrogateState":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return cls(X, Y, np.full(X.shape[1], lengthscale), **kwargs)

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.Y.shape[1]

    @property
    def task_kernel(self) -> np.ndarray:
        return self.G @ self.G.T

    @property
    def prior_mean(self) -> np.ndarray:
        if not self.normalize or self.n_obs == 0:
            return np.zeros(self.n_tasks)
        return self.Y.mean(axis=0)

    @property
    def output_scale(self) -> np.ndarray:
        if not self.normalize or self.n_obs < 2:
            return np.ones(self.n_tasks)
        std = self.Y.std(axis=0)
        return np.where(std > 1e-12, std, 1.0)

    def add(self, x: np.ndarray, y: np.ndarray) -> "SurrogateState":
        return replace(self, X=np.vstack([self.X, np.atleast_2d(x)]),
                       Y=np.vstack([self.Y, np.atleast_2d(y)]))

    def task(self, t: int) -> "SurrogateState":
        """Single-task view: Y column t with K_t reduced to its (t, t) entry"""
        kt = float(self.task_kernel[t, t])
        name = (self.task_names[t],) if self.task_names else ()
        return replace(self, Y=self.Y[:, [t]].copy(), G=np.array([[math.sqrt(kt)]]), task_names=name)


def se_kernel(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray, variance: float) -> np.ndarray:
    """Squared-exponential kernel with per-dimension lengthscales"""
    d2 = cdist(np.atleast_2d(A) / lengthscales, np.atleast_2d(B) / lengthscales, "sqeuclidean")
    return variance * np.exp(-0.5 * d2)


class _Factorization(NamedTuple):
    Qp: np.ndarray
    Qt: np.ndarray
    lam_t: np.ndarray
    D: np.ndarray
    alpha: np.ndarray
    Yn: np.ndarray


def _normalized(state: SurrogateState) -> np.ndarray:
    return (state.Y - state.prior_mean) / state.output_scale


def _factorize(state: SurrogateState) -> _Factorization:
    """Eigendecomposition of K_t (x) K_p + noise I, one eigh per factor"""
    if state.n_obs == 0:
        raise SurrogateError("surrogate has no observations")
    Kp = se_kernel(state.X, state.X, state.lengthscales, state.signal_variance)
    try:
        lam_p, Qp = np.linalg.eigh(Kp)
        lam_t, Qt = np.linalg.eigh(state.task_kernel)
    except np.linalg.LinAlgError as err:
        raise SurrogateError(f"kernel eigendecomposition failed: {err}") from err
    lam_p = np.clip(lam_p, 0.0, None)
    lam_t = np.clip(lam_t, 0.0, None)
    D = np.outer(lam_p, lam_t) + max(state.noise_variance, state.jitter)
    if not np.all(np.isfinite(D)) or np.min(D) <= 0:
        raise SurrogateError("Gram matrix is singular")
    Yn = _normalized(state)
    alpha = Qp @ ((Qp.T @ Yn @ Qt) / D) @ Qt.T
    return _Factorization(Qp, Qt, lam_t, D, alpha, Yn)


def _dense_gram(state: SurrogateState) -> np.ndarray:
    """Task-major Gram matrix: block (t, s) is K_t[t, s] * K_p"""
    Kp = se_kernel(state.X, state.X, state.lengthscales, state.signal_variance)
    return np.kron(state.task_kernel, Kp) + state.noise_variance * np.eye(state.n_obs * state.n_tasks)


def _dense_cholesky(state: SurrogateState) -> np.ndarray:
    try:
        L, _ = cholesky_with_jitter(_dense_gram(state), start=max(state.jitter, BASE_JITTER))
    except DecompositionError as err:
        raise SurrogateError(f"Gram matrix is not invertible: {err}") from err
    return L


def mtgp_posterior(state: SurrogateState, query: np.ndarray, solver: str = "eigen"
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Per-task predictive means and latent variances at one point (T,) or many (m, T)"""
    if solver not in SOLVERS:
        raise DomainError(f"unknown solver '{solver}'")
    query = np.asarray(query, dtype=np.float64)
    single = query.ndim == 1
    Q = np.atleast_2d(query)
    if Q.shape[1] != state.X.shape[1]:
        raise ShapeError("query width does not match observations", Q.shape, state.X.shape)
    Kt = state.task_kernel
    Ks = se_kernel(state.X, Q, state.lengthscales, state.signal_variance)  # n x m
    prior_var = np.outer(np.full(Q.shape[0], state.signal_variance), np.diag(Kt))

    if solver == "eigen":
        fac = _factorize(state)
        mean = Ks.T @ fac.alpha @ Kt
        a2 = (fac.Qp.T @ Ks) ** 2
        b2 = (fac.Qt * fac.lam_t) ** 2
        var = prior_var - (a2.T @ (1.0 / fac.D)) @ b2.T
    else:
        L = _dense_cholesky(state)
        n, T = state.n_obs, state.n_tasks
        y = _normalized(state).T.ravel()
        alpha = cho_solve((L, True), y)
        mean = np.empty((Q.shape[0], T))
        var = np.empty((Q.shape[0], T))
        for t in range(T):
            cross = np.kron(Kt[:, [t]], Ks)  # nT x m
            mean[:, t] = cross.T @ alpha
            v = solve_triangular(L, cross, lower=True)
            var[:, t] = prior_var[:, t] - np.sum(v * v, axis=0)

    var = np.clip(var, 0.0, None)
    scale = state.output_scale
    mean = mean * scale + state.prior_mean
    var = var * scale ** 2
    if single:
        return mean[0], var[0]
    return mean, var


def gp_posterior(state: SurrogateState, query: np.ndarray, task: int = 0, solver: str = "eigen"):
    """Single-task GP posterior (mean, variance) restricted to one task"""
    mean, var = mtgp_posterior(state.task(task), query, solver)
    if np.ndim(query) == 1:
        return float(mean[0]), float(var[0])
    return mean[:, 0], var[:, 0]


def log_marginal_likelihood(state: SurrogateState, solver: str = "eigen") -> float:
    """Exact log p(Y | X, kernel) of the normalized observations"""
    n_total = state.n_obs * state.n_tasks
    if solver == "eigen":
        fac = _factorize(state)
        proj = fac.Qp.T @ fac.Yn @ fac.Qt
        quad = float(np.sum(proj * proj / fac.D))
        logdet = float(np.sum(np.log(fac.D)))
    else:
        L = _dense_cholesky(state)
        y = _normalized(state).T.ravel()
        v = solve_triangular(L, y, lower=True)
        quad = float(v @ v)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * quad - 0.5 * logdet - 0.5 * n_total * math.log(2.0 * math.pi)


# ------------------------------------------------------------------ kernel fitting

def _pack(state: SurrogateState) -> np.ndarray:
    rows, cols = np.tril_indices(state.n_tasks)
    return np.concatenate([np.log(state.lengthscales), [math.log(state.signal_variance)],
                           [math.log(state.noise_variance)], state.G[rows, cols]])


def _unpack(state: SurrogateState, theta: np.ndarray) -> SurrogateState:
    B = state.X.shape[1]
    rows, cols = np.tril_indices(state.n_tasks)
    G = np.zeros((state.n_tasks, state.n_tasks))
    G[rows, cols] = theta[B + 2:]
    diag = np.diag_indices(state.n_tasks)
    G[diag] = np.maximum(np.abs(G[diag]), G_DIAG_MIN)
    return replace(state, lengthscales=np.exp(theta[:B]), signal_variance=float(np.exp(theta[B])),
                   noise_variance=float(np.exp(theta[B + 1])), G=G)


def _bounds(state: SurrogateState) -> List[Tuple[float, float]]:
    B = state.X.shape[1]
    rows, cols = np.tril_indices(state.n_tasks)
    g_bounds = [(G_DIAG_MIN, 10.0) if r == c else (-10.0, 10.0) for r, c in zip(rows, cols)]
    return ([(math.log(1e-3), math.log(1e2))] * B + [(math.log(1e-3), math.log(1e3))]
            + [(math.log(1e-8), math.log(10.0))] + g_bounds)


def fit_kernel_hyperparams(state: SurrogateState, restarts: int = 3, seed: int = 0,
                           max_evals: int = 2000) -> SurrogateState:
    """Multi-start Powell ascent of the log marginal likelihood; never returns a worse state"""
    if state.n_obs < 2:
        return state
    try:
        incumbent_lml = log_marginal_likelihood(state)
    except SurrogateError:
        incumbent_lml = -np.inf

    bounds = _bounds(state)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def negative_lml(theta):
        try:
            value = log_marginal_likelihood(_unpack(state, theta))
        except (SurrogateError, DCMFError):
            return 1e25
        return -value if np.isfinite(value) else 1e25

    rng = derive_rng(seed, "kernel-fit", str(state.n_obs))
    start = np.clip(_pack(state), lo, hi)
    starts = [start] + [np.clip(start + rng.normal(0.0, 0.5, size=start.size), lo, hi)
                        for _ in range(max(restarts, 1) - 1)]
    best_theta, best_lml = None, incumbent_lml
    failed = 0
    for x0 in starts:
        try:
            res = minimize(negative_lml, x0, method="Powell", bounds=bounds,
                           options={"maxfev": max_evals, "xtol": 1e-3, "ftol": 1e-6})
        except (ValueError, np.linalg.LinAlgError) as err:
            logger.debug("kernel fit restart failed: %s", err)
            failed += 1
            continue
        if not res.fun < 1e25:
            failed += 1
        elif -res.fun > best_lml:
            best_theta, best_lml = res.x, -float(res.fun)
    if failed == len(starts):
        logger.warning("kernel refit failed on all %d restarts; keeping previous parameters", failed)
    if best_theta is None:
        return state
    fitted = _unpack(state, best_theta)
    logger.debug("kernel refit: lml %.4f -> %.4f", incumbent_lml, best_lml)
    return fitted


# ------------------------------------------------------------------ acquisition

def expected_improvement(mu, sigma, best):
    """Closed-form EI for minimization: sigma * (gamma Phi(gamma) + phi(gamma))"""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    safe = np.where(sigma > 0, sigma, 1.0)
    gamma = (best - mu) / safe
    pdf, cdf = std_normal(gamma)
    ei = np.where(sigma > 0, safe * (gamma * cdf + pdf), 0.0)
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def ei_scalarized(state: SurrogateState, query: np.ndarray, best_scalar: float,
                  sigma_mode: str = "sum_std", solver: str = "eigen"):
    """EI of the summed task posteriors against the best observed 1-norm"""
    if sigma_mode not in SIGMA_MODES:
        raise DomainError(f"sigma_mode must be one of {SIGMA_MODES}")
    means, variances = mtgp_posterior(state, query, solver)
    mu_sum = np.sum(means, axis=-1)
    if sigma_mode == "sum_std":
        sigma_sum = np.sum(np.sqrt(variances), axis=-1)
    else:
        sigma_sum = np.sqrt(np.sum(variances, axis=-1))
    return expected_improvement(mu_sum, sigma_sum, best_scalar)


class Proposal(NamedTuple):
    params: HyperParams
    point: np.ndarray
    acquisition: float


def candidate_count(default: int = DEFAULT_CANDIDATES) -> int:
    raw = os.environ.get(CANDIDATES_ENV)
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise DomainError(f"{CANDIDATES_ENV} must be an integer, got '{raw}'") from None
    if value < 1:
        raise DomainError(f"{CANDIDATES_ENV} must be >= 1, got {value}")
    return value


def propose_next(state: SurrogateState, space: SearchSpace, best_scalar: float,
                 n_candidates: int = DEFAULT_CANDIDATES, seed: int = 0,
                 sigma_mode: str = "sum_std") -> Proposal:
    """argmax of scalarized EI over uniform candidates; ties go to the lowest index"""
    if n_candidates < 1:
        raise DomainError(f"n_candidates must be >= 1, got {n_candidates}")
    rng = derive_rng(seed, "propose", str(state.n_obs))
    candidates = space.sample(rng, n_candidates)
    ei = np.atleast_1d(ei_scalarized(state, candidates, best_scalar, sigma_mode))
    i = int(np.argmax(ei))
    return Proposal(space.decode(candidates[i]), candidates[i], float(ei[i]))


# ------------------------------------------------------------------ BO loop

class Evaluation(NamedTuple):
    """What an objective returns: loss vector, optional validation score, optional model"""
    losses: Any
    validation: Optional[float] = None
    payload: Any = None


@dataclass(frozen=True)
class BOStep:
    index: int
    phase: str
    params: HyperParams
    point: Tuple[float, ...]
    losses: Optional[Tuple[float, ...]]
    scalar: float
    validation: Optional[float]
    acquisition: Optional[float]
    wall_time: float
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.losses is None

    def as_record(self, loss_names: Sequence[str] = ()) -> Dict:
        losses = None
        if self.losses is not None:
            names = list(loss_names) if len(loss_names) == len(self.losses) else \
                [f"loss_{i}" for i in range(len(self.losses))]
            losses = dict(zip(names, self.losses))
        return {
            "step": self.index,
            "phase": self.phase,
            "params": self.params,
            "losses": losses,
            "scalar": self.scalar if math.isfinite(self.scalar) else None,
            "validation": self.validation,
            "acquisition": self.acquisition,
            "wall_time": self.wall_time,
            "failed": self.failed,
            "error": self.error,
        }


@dataclass
class BOTrace:
    """Append-only record of every evaluated point"""
    steps: List[BOStep] = field(default_factory=list)
    loss_names: Tuple[str, ...] = ()

    def append(self, step: BOStep):
        if step.index != len(self.steps):
            raise DomainError(f"trace step {step.index} is not contiguous (expected {len(self.steps)})")
        self.steps.append(step)

    def __len__(self) -> int:
        return len(self.steps)

    def scalars(self) -> np.ndarray:
        return np.array([s.scalar for s in self.steps], dtype=np.float64)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.scalars()) if self.steps else np.zeros(0)

    def records(self) -> List[Dict]:
        return [s.as_record(self.loss_names) for s in self.steps]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, default=_json_default) + "\n" for r in self.records())


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


class BOResult(NamedTuple):
    best: HyperParams
    trace: BOTrace
    best_index: int
    best_payload: Any


def _coerce(result) -> Tuple[np.ndarray, Tuple[str, ...], Optional[float], Any]:
    if not isinstance(result, tuple) or isinstance(result, np.ndarray):
        result = Evaluation(result)
    elif not isinstance(result, Evaluation):
        result = Evaluation(*result)
    losses = result.losses
    names: Tuple[str, ...] = tuple(getattr(losses, "names", ()))
    values = losses.as_array() if hasattr(losses, "as_array") else np.atleast_1d(np.asarray(losses, dtype=np.float64))
    validation = None if result.validation is None else float(result.validation)
    return values, names, validation, result.payload


def _fit_state(trace: BOTrace, surrogate_kind: str,
               previous: Optional[SurrogateState], seed: int, refit: bool) -> Optional[SurrogateState]:
    ok = [s for s in trace.steps if not s.failed]
    if len(ok) < 1:
        return None
    X = np.array([s.point for s in ok])
    if surrogate_kind == "gp-on-scalar":
        Y = np.array([[s.scalar] for s in ok])
    else:
        Y = np.array([s.losses for s in ok])
    if previous is not None and previous.Y.shape[1] == Y.shape[1]:
        state = replace(previous, X=X, Y=Y)
    else:
        state = SurrogateState.create(X, Y, task_names=trace.loss_names if surrogate_kind == "mtgp" else ())
    if refit:
        state = fit_kernel_hyperparams(state, seed=seed)
    return state


def run_bo(objective: Callable[[HyperParams], Any], space: SearchSpace, init_count: int = 10,
           step_count: int = 200, surrogate_kind: str = "mtgp", seed: int = 0,
           n_candidates: Optional[int] = None, sigma_mode: str = "sum_std",
           refit_every: int = 1, progress: bool = False,
           callback: Optional[Callable[[BOStep], None]] = None) -> BOResult:
    """Initial random design, then propose -> evaluate -> augment -> refit"""
    if init_count < 2:
        raise DomainError(f"init_count must be >= 2, got {init_count}")
    if step_count < 0:
        raise DomainError(f"step_count must be >= 0, got {step_count}")
    if surrogate_kind not in SURROGATE_KINDS:
        raise DomainError(f"surrogate_kind must be one of {SURROGATE_KINDS}")
    n_candidates = candidate_count() if n_candidates is None else n_candidates

    trace = BOTrace()
    best = {"index": -1, "key": (2, math.inf, math.inf), "payload": None}
    rng = derive_rng(seed, "bo-init")

    def evaluate(point: np.ndarray, phase: str, acquisition: Optional[float]):
        params = space.decode(point)
        started = time.perf_counter()
        losses, validation, payload, error = None, None, None, None
        try:
            values, names, validation, payload = _coerce(objective(params))
            if not np.all(np.isfinite(values)):
                raise DomainError("objective returned non-finite losses")
            losses = tuple(float(v) for v in values)
            if names and not trace.loss_names:
                trace.loss_names = names
        except Exception as err:
            logger.warning("objective failed at %s: %s", params, err)
            error, validation, payload = str(err), None, None
        scalar = float(sum(losses)) if losses is not None else math.inf
        step = BOStep(len(trace), phase, params, tuple(float(v) for v in point), losses, scalar,
                      validation, acquisition, time.perf_counter() - started, error)
        trace.append(step)
        if losses is not None:
            # steps carrying a validation score outrank those without one
            if validation is not None and math.isfinite(validation):
                key = (0, validation, scalar)
            else:
                key = (1, scalar, 0.0)
            if key < best["key"]:
                best.update(index=step.index, key=key, payload=payload)
        if callback is not None:
            callback(step)

    for point in space.sample(rng, init_count):
        evaluate(point, "init", None)

    state: Optional[SurrogateState] = None
    steps = range(step_count)
    if progress:
        steps = tqdm(steps, desc=f"BO ({surrogate_kind})", leave=False)
    for i in steps:
        if surrogate_kind == "random":
            point = space.sample(derive_rng(seed, "bo-random", str(i)), 1)[0]
            evaluate(point, "search", None)
            continue
        refit = (i % max(refit_every, 1)) == 0
        state = _fit_state(trace, surrogate_kind, state, seed, refit)
        finite = trace.scalars()[np.isfinite(trace.scalars())]
        if state is None or finite.size == 0:
            point = space.sample(derive_rng(seed, "bo-fallback", str(i)), 1)[0]
            evaluate(point, "search", None)
            continue
        best_scalar = float(finite.min())
        try:
            proposal = propose_next(state, space, best_scalar, n_candidates, seed=seed + i,
                                    sigma_mode=sigma_mode)
        except SurrogateError as err:
            logger.warning("surrogate failed at step %d (%s); sampling at random", i, err)
            point = space.sample(derive_rng(seed, "bo-fallback", str(i)), 1)[0]
            evaluate(point, "search", None)
            continue
        evaluate(proposal.point, "search", proposal.acquisition)

    if best["index"] < 0:
        raise DomainError("every objective evaluation failed")
    best_step = trace.steps[best["index"]]
    logger.info("BO finished: best step %d, scalar=%.6g, validation=%s",
                best_step.index, best_step.scalar, best_step.validation)
    return BOResult(best_step.params, trace, best_step.index, best["payload"])


def average_cumulative(values: Sequence[float], interval: int = 25) -> List[float]:
    """Mean of the finite values inside each consecutive block of `interval` steps"""
    if interval < 1:
        raise DomainError(f"interval must be >= 1, got {interval}")
    arr = np.asarray(values, dtype=np.float64)
    out = []
    for start in range(0, arr.size, interval):
        block = arr[start:start + interval]
        block = block[np.isfinite(block)]
        out.append(float(block.mean()) if block.size else math.nan)
    return out


DCMF_SEARCH_SPACE: Dict[str, Dict] = {
    "learning_rate": {"kind": "log-continuous", "bounds": [1e-5, 1e-2]},
    "convergence_threshold": {"kind": "log-continuous", "bounds": [1e-6, 1e-3]},
    "weight_decay": {"kind": "log-continuous", "bounds": [1e-7, 1e-2]},
    "f_k": {"kind": "continuous", "bounds": [0.01, 0.9]},
    "K": {"kind": "integer", "bounds": [10, 200]},
    "activation": {"kind": "categorical", "choices": ["tanh", "relu", "sigmoid"]},
}


def default_search_space() -> SearchSpace:
    """Learning and model hyperparameters of dCMF worth searching"""
    return SearchSpace.from_dict(DCMF_SEARCH_SPACE)


TOY_BOUNDS = (2.5, 7.5)


def toy_two_task(x: float) -> np.ndarray:
    """[sin x + sin(10x/3), 2 cos x + cos 2x]"""
    return np.array([math.sin(x) + math.sin(10.0 * x / 3.0), 2.0 * math.cos(x) + math.cos(2.0 * x)])
