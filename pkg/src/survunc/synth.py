"""Synthetic survival data from a covariate-dependent mixture of three hazards.

Each subject's survival curve is a convex combination of three closed-form
component curves: a constant hazard, an increasing Weibull hazard and a
decreasing Weibull hazard. Mixture weights are a softmax of linear scores
of the covariates. A shared time scale exp(-eta(x)), linear in x, moves the
whole curve, so eta carries the risk level while the weights decide how
spread out the event time is. Ground-truth curves are exact:

    S(t|x) = sum_c w_c(x) exp(-(t exp(eta(x)) / lambda_c) ** k_c)
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from ._rng import rng_for
from .data import SurvivalCurve, SurvivalDataset, as_grid
from .models.base import SurvivalModel

COMPONENTS = ("constant", "weibull_inc", "weibull_dec")

# (shape, scale) per component; shape 1 is the constant hazard 1/scale
DEFAULT_PARAMS = {
    "constant": (1.0, 20.0),
    "weibull_inc": (6.0, 20.0),
    "weibull_dec": (0.4, 20.0),
}

INVERSE_GRID_SIZE = 4096
REFERENCE_SIZE = 20000
_MAX_RATE_FACTOR = 1000.0


class SimulationError(ValueError):
    pass


@dataclass
class HazardMixtureSpec:
    """Parameters of the generator.

    Parameters
    ----------
    d : int
        Covariate dimension.
    components : tuple of str
        Subset of ``COMPONENTS``. A single component gives a degenerate
        mixture with that component's closed-form curve for every subject.
    censoring : float
        Target fraction of censored subjects in [0, 1).
    coef_scale : float
        Scale of the mixing coefficients (larger means sharper weights).
    risk_scale : float
        Norm of the time-scale coefficients; 0 gives the pure mixture.
        The first ``max(d // 2, 1)`` coefficients are negative and the rest
        positive, so the default covariate shift lowers risk.
    dispersion_coupling : float
        Adds ``-c * eta / risk_scale`` to the decreasing-Weibull score and
        ``+c * eta / risk_scale`` to the increasing-Weibull score, so that
        long-lived subjects have the more dispersed event times.
    t_max : float
        Right end of the inverse-transform grid.
    seed : int
        Drives coefficients, covariates, event and censoring draws.
    """

    d: int = 8
    components: tuple = COMPONENTS
    censoring: float = 0.37
    coef_scale: float = 3.0
    risk_scale: float = 2.0
    dispersion_coupling: float = 8.0
    t_max: float = 100.0
    seed: int = 0
    params: dict = field(default_factory=lambda: dict(DEFAULT_PARAMS))

    def __post_init__(self):
        self.components = tuple(self.components)
        if self.d < 1:
            raise SimulationError("d must be >= 1")
        if not self.components or any(c not in COMPONENTS for c in self.components):
            raise SimulationError(f"components must be a non-empty subset of {COMPONENTS}")
        if not 0.0 <= self.censoring < 1.0:
            raise SimulationError(f"censoring fraction must lie in [0, 1), got {self.censoring}")
        self.params = {c: tuple(float(v) for v in self.params[c]) for c in self.components}
        for c, (shape, scale) in self.params.items():
            if shape <= 0 or scale <= 0:
                raise SimulationError(f"component {c} needs positive shape and scale")


class Oracle:
    """Closed-form ground truth of a generated dataset."""

    def __init__(self, spec, weights, bias, risk_coef, censor_rate, shift=None):
        self.spec = spec
        self.weights = np.asarray(weights, dtype=float)
        self.bias = np.asarray(bias, dtype=float)
        self.risk_coef = np.asarray(risk_coef, dtype=float)
        self.censor_rate = float(censor_rate)
        self.shift = np.zeros(spec.d) if shift is None else np.asarray(shift, dtype=float)
        self._shapes = np.array([spec.params[c][0] for c in spec.components])
        self._scales = np.array([spec.params[c][1] for c in spec.components])

    def mixing_weights(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        z = X @ self.weights.T + self.bias
        z -= z.max(axis=1, keepdims=True)
        w = np.exp(z)
        return w / w.sum(axis=1, keepdims=True)

    def eta(self, X):
        """Log time-acceleration; larger means earlier events."""
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.risk_coef

    def component_survival(self, t):
        """(..., C) closed-form component curves at base-scale times ``t``."""
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return np.exp(-((t[..., None] / self._scales) ** self._shapes))

    def component_hazard(self, t):
        t = np.asarray(t, dtype=float)
        k, lam = self._shapes, self._scales
        return k / lam * (t[..., None] / lam) ** (k - 1.0)

    def survival(self, X, grid):
        """(n, G) ground-truth survival of each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        grid = np.asarray(grid, dtype=float)
        w = self.mixing_weights(X)
        scale = np.exp(self.eta(X))
        out = np.empty((X.shape[0], grid.size))
        for s in range(0, X.shape[0], 256):
            sl = slice(s, s + 256)
            comp = self.component_survival(grid[None, :] * scale[sl, None])
            out[sl] = np.einsum("ngc,nc->ng", comp, w[sl])
        # the weights sum to 1 only up to rounding
        np.clip(out, 0.0, 1.0, out=out)
        out[:, grid <= 0] = 1.0
        return out

    def survival_at(self, X, times):
        times = np.asarray(times, dtype=float).ravel()
        comp = self.component_survival(times * np.exp(self.eta(X)))
        return np.einsum("ij,ij->i", self.mixing_weights(X), comp)

    def hazard(self, x, t):
        """Mixture hazard of one subject: e^eta sum_c w_c S_c h_c / sum_c w_c S_c at t e^eta."""
        w = self.mixing_weights(x)[0]
        a = float(np.exp(self.eta(x))[0])
        u = np.asarray(t, dtype=float) * a
        s = self.component_survival(u) * w
        return a * (s * self.component_hazard(u)).sum(axis=-1) / s.sum(axis=-1)

    def to_dict(self):
        spec = asdict(self.spec)
        spec["components"] = list(spec["components"])
        spec["params"] = {c: list(v) for c, v in spec["params"].items()}
        return {
            "format": "survunc-oracle",
            "version": 1,
            "spec": spec,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "risk_coef": self.risk_coef.tolist(),
            "censor_rate": self.censor_rate,
            "shift": self.shift.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "survunc-oracle" or doc.get("version") != 1:
            raise SimulationError("not a version-1 oracle document")
        spec = HazardMixtureSpec(**{**doc["spec"], "params": {c: tuple(v) for c, v in doc["spec"]["params"].items()}})
        return cls(spec, doc["weights"], doc["bias"], doc["risk_coef"], doc["censor_rate"], doc["shift"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class GroundTruthModel(SurvivalModel):
    """A "perfect" base model that reads curves from an oracle."""

    kind = "oracle"

    def __init__(self, oracle, grid=None):
        self.oracle = oracle
        self.n_features_ = oracle.spec.d
        self.grid_ = as_grid(np.linspace(0.0, oracle.spec.t_max, 257) if grid is None else grid)

    def fit(self, train, val=None):
        return self

    def _predict_grid(self, X, grid):
        return self.oracle.survival(X, grid)

    def survival_at(self, X, times):
        X = self._check_X(X)
        return self.oracle.survival_at(X, times)


def _coefficients(spec):
    rng = rng_for(spec.seed, "coefficients")
    C = len(spec.components)
    # spread the coefficient mass so no single feature dominates
    weights = rng.normal(scale=spec.coef_scale, size=(C, spec.d)) / np.sqrt(max(spec.d, 1) / 4.0)
    bias = np.zeros(C)
    beta = np.abs(rng.normal(size=spec.d))
    beta *= spec.risk_scale / np.linalg.norm(beta)
    # the features moved by default_shift are protective
    beta[: max(spec.d // 2, 1)] *= -1.0
    if spec.dispersion_coupling and spec.risk_scale > 0:
        unit = beta / spec.risk_scale
        for name, sign in (("weibull_dec", -1.0), ("weibull_inc", 1.0)):
            if name in spec.components:
                weights[spec.components.index(name)] += sign * spec.dispersion_coupling * unit
    return weights, bias, beta


def _subject_draws(seed, keys, n, d):
    X = np.empty((n, d))
    u = np.empty((n, 2))
    for i in range(n):
        rng = rng_for(seed, *keys, i)
        X[i] = rng.standard_normal(d)
        u[i] = rng.random(2)
    return X, u


def _base_event_times(oracle, w, u_event):
    """Inverse transform of the unscaled mixture on a fixed grid; exact root finding past its end."""
    spec = oracle.spec
    grid = np.linspace(0.0, spec.t_max, INVERSE_GRID_SIZE)
    comp = oracle.component_survival(grid)
    out = np.empty(w.shape[0])
    for start in range(0, w.shape[0], 1024):
        sl = slice(start, start + 1024)
        surv = w[sl] @ comp.T
        u = u_event[sl]
        k = (surv > u[:, None]).sum(axis=1)
        kk = np.clip(k, 1, grid.size - 1)
        rows = np.arange(k.size)
        s_hi, s_lo = surv[rows, kk - 1], surv[rows, kk]
        gap = np.where(s_hi > s_lo, s_hi - s_lo, 1.0)
        frac = np.where(s_hi > s_lo, (s_hi - u) / gap, 0.0)
        t = grid[kk - 1] + frac * (grid[kk] - grid[kk - 1])
        tail = np.flatnonzero(k >= grid.size)
        if tail.size:
            t[tail] = _tail_times(oracle, w[sl][tail], u[tail])
        out[sl] = t
    return out


def _tail_times(oracle, w, u):
    """Solve S(t) = u beyond t_max by vectorised bisection."""
    lo = np.full(u.size, oracle.spec.t_max)
    hi = lo * 2.0
    while True:
        above = (oracle.component_survival(hi) * w).sum(axis=1) > u
        if not above.any():
            break
        lo = np.where(above, hi, lo)
        hi = np.where(above, hi * 2.0, hi)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        above = (oracle.component_survival(mid) * w).sum(axis=1) > u
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def _event_times(oracle, X, u_event):
    t0 = _base_event_times(oracle, oracle.mixing_weights(X), u_event)
    return np.maximum(t0 * np.exp(-oracle.eta(X)), np.finfo(float).tiny)


def censoring_fraction(rate, event_times):
    """Expected censored fraction under exponential censoring at ``rate``."""
    return float(np.mean(-np.expm1(-rate * event_times)))


def solve_censoring_rate(target, event_times, t_max):
    if target == 0.0:
        return 0.0
    hi_rate = _MAX_RATE_FACTOR / t_max
    hi = censoring_fraction(hi_rate, event_times)
    if not 0.0 < target < hi:
        raise SimulationError(f"censoring fraction {target} is unreachable; achievable range is [0, {hi:.4f})")
    return brentq(lambda r: censoring_fraction(r, event_times) - target, 0.0, hi_rate, xtol=1e-14)


def make_oracle(spec, shift=None):
    """Coefficients plus the censoring rate solved on a reference sample."""
    weights, bias, beta = _coefficients(spec)
    oracle = Oracle(spec, weights, bias, beta, 0.0, shift)
    ref_rng = rng_for(spec.seed, "reference")
    X_ref = ref_rng.standard_normal((REFERENCE_SIZE, spec.d))
    t_ref = _event_times(oracle, X_ref, ref_rng.random(REFERENCE_SIZE))
    oracle.censor_rate = solve_censoring_rate(spec.censoring, t_ref, spec.t_max)
    return oracle


def _sample(oracle, n, keys):
    spec = oracle.spec
    if n < 1:
        raise SimulationError("n must be >= 1")
    X, u = _subject_draws(spec.seed, keys, n, spec.d)
    X = X + oracle.shift
    t_event = _event_times(oracle, X, u[:, 0])
    if oracle.censor_rate > 0:
        t_cens = -np.log1p(-u[:, 1]) / oracle.censor_rate
        t_cens = np.maximum(t_cens, np.finfo(float).tiny)
    else:
        t_cens = np.full(n, np.inf)
    event = (t_event <= t_cens).astype(np.int64)
    time = np.where(event == 1, t_event, t_cens)
    names = tuple(f"x{j}" for j in range(spec.d))
    return SurvivalDataset(X, time, event, feature_names=names)


def generate(spec, n):
    """Draw ``n`` subjects; returns ``(dataset, oracle)``.

    Subject ``i`` depends only on ``(spec.seed, i)``, so a larger ``n``
    extends a smaller draw.
    """
    oracle = make_oracle(spec)
    return _sample(oracle, n, ("subject",)), oracle


def default_shift(d, magnitude=1.0):
    """``magnitude`` standard deviations on the first half of the features."""
    shift = np.zeros(d)
    shift[: max(d // 2, 1)] = magnitude
    return shift


def generate_ood(spec, n, shift=None):
    """Covariate-shifted draw; labels follow the same hazard mechanism.

    ``shift`` is a per-feature mean offset (scalar or length-d vector);
    the default shifts half of the features by one standard deviation.
    Returns ``(dataset, oracle)``.
    """
    if shift is None:
        shift = default_shift(spec.d)
    shift = np.broadcast_to(np.asarray(shift, dtype=float), (spec.d,)).copy()
    base = make_oracle(spec)
    oracle = Oracle(spec, base.weights, base.bias, base.risk_coef, base.censor_rate, shift)
    return _sample(oracle, n, ("ood",)), oracle


def ground_truth_curve(oracle, x, grid):
    """Closed-form S(t|x) of one subject as a SurvivalCurve."""
    grid = as_grid(grid)
    return SurvivalCurve(grid, np.clip(oracle.survival(np.atleast_2d(x), grid)[0], 0.0, 1.0))
