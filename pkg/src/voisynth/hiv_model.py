"""Evidence-synthesis model for HIV prevalence among MSM in London.

The model is a DAG: founder parameters with priors feed deterministic
functions (prevalences, diagnosed fractions, case counts) which in turn
parameterise the likelihood of seven data sources:

* ``pop``     ONS male population count, Poisson(mu_pop)
* ``natsal``  NATSAL subgroup counts, Multinomial(rho_G, rho_N, rho_P, rest)
* ``sophid``  prevalent diagnosed MSM, Poisson(mu_M)
* ``handd``   new diagnoses among them, Binomial(y_M, p_H)
* ``gumcad``  GUM clinic testing cascade g1 > ... > g5
* ``gumanon`` GUM Anon unlinked survey, Binomial(gAN, pi_GA)
* ``gmshs``   community survey positives in GMSM and NGMSM

Founders live in a fixed-length float vector (see ``FOUNDERS``); the same
jitted kernels evaluate densities for the sampler and push posterior draws
forward to the derived outputs.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

FOUNDERS = (
    "log_mu_pop",
    "rho_G", "rho_N", "rho_P",
    "a_S",
    "a_H",
    "a_deltaG", "a_deltaN", "a_deltaP",
    "gamma1", "gamma2", "gamma3", "gamma4",
    "a_UN",
    "a_OP",
    "p_GM_G", "p_GM_N",
    "pibar_G_free",
)
N_FOUNDERS = len(FOUNDERS)
_F = {n: i for i, n in enumerate(FOUNDERS)}

OUTPUTS = (
    "mu_pop", "rho_rest",
    "p_UN", "a_EX", "pi_UN", "pi_OP", "pi_GD", "pi_GA", "or_GM",
    "pibar_G", "delta_G", "pi_G", "pidelta_G",
    "pibar_N", "delta_N", "pi_N", "pidelta_N",
    "pibar_P", "delta_P", "pi_P", "pidelta_P",
    "r_G", "r_N", "r_P",
    "mu_G", "mu_N", "mu_P",
    "mu_DG", "mu_DN", "mu_DP",
    "mu_UG", "mu_UN", "mu_UP",
    "mu_D", "mu_U", "mu", "mu_M", "p_H",
)
N_OUTPUTS = len(OUTPUTS)
_O = {n: i for i, n in enumerate(OUTPUTS)}

# Outputs of interest for sensitivity grids: diagnosed/undiagnosed prevalence
# and case counts per group, plus totals.
OUTPUTS_OF_INTEREST = (
    "pidelta_G", "pidelta_N", "pibar_G", "pibar_N",
    "mu_DG", "mu_DN", "mu_UG", "mu_UN", "mu", "mu_U",
)

LIKELIHOOD_TERMS = ("pop", "natsal", "sophid", "handd", "gumcad", "gumanon", "gmshs")

# Uniform founders: name -> (lower, upper)
UNIFORM_BOUNDS = {
    "a_H": (0.0, 1.0),
    "a_deltaG": (0.0, 1.0),
    "a_deltaN": (0.0, 1.0),
    "a_deltaP": (0.0, 1.0),
    "gamma1": (0.0, 1.0),
    "gamma2": (0.0, 1.0),
    "gamma3": (0.0, 1.0),
    "gamma4": (0.0, 0.15),
    "a_UN": (math.log(0.5), math.log(1.5)),
    "a_OP": (0.0, 1.0),
    "p_GM_G": (0.0, 1.0),
    "p_GM_N": (0.0, 1.0),
    "pibar_G_free": (0.0, 1.0),
}
LOG_MU_POP_SD = 1000.0
A_S_MEAN, A_S_SD = 1.0, 0.018   # prior on exp(a_S)
MAX_PREVALENCE_OPT_OUT = 0.15

_LO = np.zeros(N_FOUNDERS)
_HI = np.zeros(N_FOUNDERS)
_IS_UNIF = np.zeros(N_FOUNDERS, dtype=np.bool_)
for _name, (_lo, _hi) in UNIFORM_BOUNDS.items():
    _LO[_F[_name]] = _lo
    _HI[_F[_name]] = _hi
    _IS_UNIF[_F[_name]] = True


class Scenario(enum.IntEnum):
    """Structural assumptions for undiagnosed/diagnosed prevalence in GMSM."""

    BASE = 0
    A_GUM_ANON_ONLY = 1
    B_GUMCAD_DIAGNOSED = 2

    @classmethod
    def parse(cls, tag) -> "Scenario":
        if isinstance(tag, Scenario):
            return tag
        key = str(tag).strip().lower()
        table = {"base": cls.BASE, "a": cls.A_GUM_ANON_ONLY, "b": cls.B_GUMCAD_DIAGNOSED,
                 "a_gum_anon_only": cls.A_GUM_ANON_ONLY,
                 "b_gumcad_diagnosed": cls.B_GUMCAD_DIAGNOSED}
        try:
            return table[key]
        except KeyError:
            raise ValueError(f"unknown scenario {tag!r}; expected base, a or b") from None

    @property
    def tag(self) -> str:
        return {0: "base", 1: "a", 2: "b"}[int(self)]


def free_founders(scenario) -> tuple[str, ...]:
    """Founders that carry a prior (and are sampled) under ``scenario``."""
    scenario = Scenario.parse(scenario)
    if scenario == Scenario.A_GUM_ANON_ONLY:
        return FOUNDERS
    return FOUNDERS[:-1]


# ---------------------------------------------------------------------------
# data

class HivDataError(ValueError):
    pass


@dataclass(frozen=True)
class HivData:
    y_pop: int
    y_G: int
    y_N: int
    y_P: int
    n_NAT: int
    y_M: int
    y_H: int
    g1: int
    g2: int
    g3: int
    g4: int
    g5: int
    gA: int
    gAN: int
    y_GM_G: int
    n_GM_G: int
    y_GM_N: int
    n_GM_N: int
    pmsm_factor: float = 0.25
    include_pmsm: bool = True
    synthetic: tuple[str, ...] = ()
    notes: str = ""

    def __post_init__(self):
        problems = []
        for f in _COUNT_FIELDS:
            v = getattr(self, f)
            if int(v) != v or v < 0:
                problems.append(f"{f} must be a nonnegative integer (got {v!r})")
        g = [self.g1, self.g2, self.g3, self.g4, self.g5]
        for i in range(1, 5):
            if g[i] > g[i - 1]:
                problems.append(f"g{i + 1} > g{i}")
        if self.gA > self.gAN:
            problems.append("gA > gAN")
        if self.y_H > self.y_M:
            problems.append("y_H > y_M")
        if self.y_G + self.y_N + self.y_P > self.n_NAT:
            problems.append("y_G + y_N + y_P > n_NAT")
        if self.y_GM_G > self.n_GM_G or self.y_GM_N > self.n_GM_N:
            problems.append("GMSHS positives exceed denominators")
        if not self.pmsm_factor >= 0:
            problems.append("pmsm_factor must be >= 0")
        if problems:
            raise HivDataError("; ".join(problems))
        object.__setattr__(self, "synthetic", tuple(self.synthetic))

    def context(self, scenario, terms=LIKELIHOOD_TERMS) -> np.ndarray:
        """Flat float vector consumed by the jitted density kernels."""
        scenario = Scenario.parse(scenario)
        unknown = set(terms) - set(LIKELIHOOD_TERMS)
        if unknown:
            raise ValueError(f"unknown likelihood terms {sorted(unknown)}")
        ctx = [getattr(self, f) for f in _COUNT_FIELDS]
        ctx += [self.pmsm_factor, float(self.include_pmsm), float(int(scenario))]
        ctx += [float(t in terms) for t in LIKELIHOOD_TERMS]
        return np.array(ctx, dtype=float)

    def to_json(self) -> dict:
        d = asdict(self)
        d["synthetic"] = list(self.synthetic)
        return d


_COUNT_FIELDS = ("y_pop", "y_G", "y_N", "y_P", "n_NAT", "y_M", "y_H",
                 "g1", "g2", "g3", "g4", "g5", "gA", "gAN",
                 "y_GM_G", "n_GM_G", "y_GM_N", "n_GM_N")
# positions in the context vector
_C_PMSM_FACTOR = len(_COUNT_FIELDS)
_C_PMSM_ON = _C_PMSM_FACTOR + 1
_C_SCENARIO = _C_PMSM_FACTOR + 2
_C_TERMS = _C_PMSM_FACTOR + 3

DEFAULT_DATA = "synthetic_london_2012.json"


def load_data(path=None) -> HivData:
    """Load a model data file; ``None`` loads the bundled synthetic default."""
    if path is None:
        text = resources.files("voisynth").joinpath("data").joinpath(DEFAULT_DATA).read_text()
        source = f"<bundled {DEFAULT_DATA}>"
    else:
        text = Path(path).read_text()
        source = str(path)
    raw = json.loads(text)
    required = [f.name for f in fields(HivData) if f.name in _COUNT_FIELDS]
    missing = [f for f in required if f not in raw]
    if missing:
        raise HivDataError(f"{source}: missing required fields {missing}")
    known = {f.name for f in fields(HivData)}
    kwargs = {k: v for k, v in raw.items() if k in known}
    for k in _COUNT_FIELDS:
        v = kwargs[k]
        if isinstance(v, float) and v.is_integer():
            kwargs[k] = int(v)
    return HivData(**kwargs)


# ---------------------------------------------------------------------------
# parameters

@dataclass
class HivParams:
    """Founder parameter values; ``pibar_G_free`` is only used in scenario (a)."""

    log_mu_pop: float
    rho_G: float
    rho_N: float
    rho_P: float
    a_S: float = 0.0
    a_H: float = 0.5
    a_deltaG: float = 0.5
    a_deltaN: float = 0.5
    a_deltaP: float = 0.5
    gamma1: float = 0.5
    gamma2: float = 0.5
    gamma3: float = 0.5
    gamma4: float = 0.075
    a_UN: float = 0.5 * (math.log(0.5) + math.log(1.5))
    a_OP: float = 0.5
    p_GM_G: float = 0.5
    p_GM_N: float = 0.5
    pibar_G_free: float = 0.5

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FOUNDERS], dtype=float)

    @classmethod
    def from_array(cls, theta) -> "HivParams":
        theta = np.asarray(theta, dtype=float)
        return cls(**{n: float(theta[i]) for i, n in enumerate(FOUNDERS)})

    @classmethod
    def reference(cls, data: HivData) -> "HivParams":
        """Uniforms at their midpoints, rho = (0.01, 0.04, 0.01), mu_pop = y_pop."""
        return cls(log_mu_pop=math.log(data.y_pop), rho_G=0.01, rho_N=0.04, rho_P=0.01)


def _as_theta(params) -> np.ndarray:
    if isinstance(params, HivParams):
        return params.to_array()
    theta = np.asarray(params, dtype=float)
    if theta.shape != (N_FOUNDERS,):
        raise ValueError(f"expected {N_FOUNDERS} founder values, got shape {theta.shape}")
    return theta


# ---------------------------------------------------------------------------
# jitted kernels

@njit(cache=True)
def _odds(p):
    return p / (1.0 - p)


@njit(cache=True)
def _from_odds(o):
    return o / (1.0 + o)


@njit(cache=True)
def _outputs_kernel(theta, scenario, pmsm_factor, pmsm_on, out):
    """Fill ``out`` with derived outputs. Returns False if theta is degenerate."""
    mu_pop = math.exp(theta[0])
    rho_G, rho_N, rho_P = theta[1], theta[2], theta[3]
    a_S, a_H = theta[4], theta[5]
    a_dG, a_dN, a_dP = theta[6], theta[7], theta[8]
    g1, g2, g3, g4 = theta[9], theta[10], theta[11], theta[12]
    a_UN, a_OP = theta[13], theta[14]
    p_GM_G, p_GM_N = theta[15], theta[16]

    if g1 <= 0.0:
        return False
    lg4 = math.log(g4) - math.log1p(-g4)
    p_UN = 1.0 / (1.0 + math.exp(-(lg4 + a_UN)))
    a_EX = a_OP * (MAX_PREVALENCE_OPT_OUT - g4)
    pi_UN = g1 * (1.0 - g2) * p_UN
    pi_OP = g1 * g2 * (1.0 - g3) * (g4 + a_EX)
    if scenario == 1:
        pibar_G = theta[17]
    else:
        pibar_G = pi_UN + pi_OP
    pi_GD = g1 * g2 * g3 * g4
    pi_GA = (pibar_G + pi_GD) / g1
    or_GM = _odds(p_GM_N) / _odds(p_GM_G)
    pibar_N = _from_odds(_odds(pibar_G) * or_GM)

    if scenario == 2:
        pidelta_G = (1.0 - g1) + pi_GD
        pi_G = pidelta_G + pibar_G
        delta_G = pidelta_G / pi_G
    else:
        delta_G = a_dG * (1.0 - pibar_G)
        pi_G = pibar_G / (1.0 - delta_G)
        pidelta_G = pi_G * delta_G
    delta_N = a_dN * (1.0 - pibar_N)
    pi_N = pibar_N / (1.0 - delta_N)
    pidelta_N = pi_N * delta_N

    if pmsm_on:
        pibar_P = pibar_N * pmsm_factor
        delta_P = a_dP * (1.0 - pibar_P)
        pi_P = pibar_P / (1.0 - delta_P)
        pidelta_P = pi_P * delta_P
    else:
        pibar_P = 0.0
        delta_P = 0.0
        pi_P = 0.0
        pidelta_P = 0.0

    r_G = rho_G * mu_pop
    r_N = rho_N * mu_pop
    r_P = rho_P * mu_pop
    mu_G = pi_G * r_G
    mu_N = pi_N * r_N
    mu_P = pi_P * r_P
    mu_DG = delta_G * mu_G
    mu_DN = delta_N * mu_N
    mu_DP = delta_P * mu_P
    mu_UG = mu_G - mu_DG
    mu_UN = mu_N - mu_DN
    mu_UP = mu_P - mu_DP
    mu_D = mu_DG + mu_DN + mu_DP
    mu_U = mu_UG + mu_UN + mu_UP
    mu = mu_DG + mu_DN + mu_UG + mu_UN
    mu_M = math.exp(a_S) * mu_D
    p_H = a_H * mu_DG / mu_D if mu_D > 0.0 else 0.0

    vals = (mu_pop, 1.0 - rho_G - rho_N - rho_P,
            p_UN, a_EX, pi_UN, pi_OP, pi_GD, pi_GA, or_GM,
            pibar_G, delta_G, pi_G, pidelta_G,
            pibar_N, delta_N, pi_N, pidelta_N,
            pibar_P, delta_P, pi_P, pidelta_P,
            r_G, r_N, r_P,
            mu_G, mu_N, mu_P,
            mu_DG, mu_DN, mu_DP,
            mu_UG, mu_UN, mu_UP,
            mu_D, mu_U, mu, mu_M, p_H)
    for i in range(len(vals)):
        out[i] = vals[i]
    return True


@njit(cache=True)
def _norm_logpdf(x, m, s):
    z = (x - m) / s
    return -0.5 * z * z - math.log(s) - 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def _log_prior_kernel(theta, scenario, lo, hi, is_unif):
    lp = 0.0
    lp += _norm_logpdf(theta[0], 0.0, LOG_MU_POP_SD)
    rG, rN, rP = theta[1], theta[2], theta[3]
    if rG < 0.0 or rN < 0.0 or rP < 0.0 or rG + rN + rP > 1.0:
        return -np.inf
    lp += math.log(6.0)   # Dirichlet(1,1,1,1) density on the 3-simplex
    e = math.exp(theta[4])
    lp += _norm_logpdf(e, A_S_MEAN, A_S_SD) + theta[4]
    n = theta.shape[0] if scenario == 1 else theta.shape[0] - 1
    for i in range(n):
        if is_unif[i]:
            x = theta[i]
            if not (lo[i] < x < hi[i]):
                return -np.inf
            lp -= math.log(hi[i] - lo[i])
    return lp


@njit(cache=True)
def _binom_logpmf(k, n, p):
    if p <= 0.0:
        return 0.0 if k == 0 else -np.inf
    if p >= 1.0:
        return 0.0 if k == n else -np.inf
    return (math.lgamma(n + 1.0) - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0)
            + k * math.log(p) + (n - k) * math.log1p(-p))


@njit(cache=True)
def _pois_logpmf(k, mu):
    if mu <= 0.0:
        return 0.0 if k == 0 else -np.inf
    return k * math.log(mu) - mu - math.lgamma(k + 1.0)


@njit(cache=True)
def _log_lik_kernel(theta, out, ctx):
    y_pop, y_G, y_N, y_P, n_NAT = ctx[0], ctx[1], ctx[2], ctx[3], ctx[4]
    y_M, y_H = ctx[5], ctx[6]
    g1, g2, g3, g4, g5 = ctx[7], ctx[8], ctx[9], ctx[10], ctx[11]
    gA, gAN = ctx[12], ctx[13]
    yGMG, nGMG, yGMN, nGMN = ctx[14], ctx[15], ctx[16], ctx[17]
    t = 21   # _C_TERMS
    ll = 0.0
    if ctx[t + 0] > 0.0:
        ll += _pois_logpmf(y_pop, out[0])
    if ctx[t + 1] > 0.0:
        rho_rest = out[1]
        y_rest = n_NAT - y_G - y_N - y_P
        ll += math.lgamma(n_NAT + 1.0) - math.lgamma(y_G + 1.0) - math.lgamma(y_N + 1.0) \
            - math.lgamma(y_P + 1.0) - math.lgamma(y_rest + 1.0)
        for y, r in ((y_G, theta[1]), (y_N, theta[2]), (y_P, theta[3]), (y_rest, rho_rest)):
            if y > 0.0:
                if r <= 0.0:
                    return -np.inf
                ll += y * math.log(r)
    if ctx[t + 2] > 0.0:
        ll += _pois_logpmf(y_M, out[36])
    if ctx[t + 3] > 0.0:
        p_H = out[37]
        if p_H > 1.0:
            return -np.inf
        ll += _binom_logpmf(y_H, y_M, p_H)
    if ctx[t + 4] > 0.0:
        ll += _binom_logpmf(g2, g1, theta[9])
        ll += _binom_logpmf(g3, g2, theta[10])
        ll += _binom_logpmf(g4, g3, theta[11])
        ll += _binom_logpmf(g5, g4, theta[12])
    if ctx[t + 5] > 0.0:
        pi_GA = out[7]
        if pi_GA > 1.0:
            return -np.inf
        ll += _binom_logpmf(gA, gAN, pi_GA)
    if ctx[t + 6] > 0.0:
        ll += _binom_logpmf(yGMG, nGMG, theta[15])
        ll += _binom_logpmf(yGMN, nGMN, theta[16])
    return ll


@njit(cache=True)
def _log_post_kernel(theta, ctx, lo, hi, is_unif, out):
    scenario = int(ctx[20])   # _C_SCENARIO
    lp = _log_prior_kernel(theta, scenario, lo, hi, is_unif)
    if not np.isfinite(lp):
        return -np.inf
    ok = _outputs_kernel(theta, scenario, ctx[18], ctx[19] > 0.0, out)
    if not ok:
        return -np.inf
    for i in range(out.shape[0]):
        if not np.isfinite(out[i]):
            return -np.inf
    ll = _log_lik_kernel(theta, out, ctx)
    if np.isnan(ll):
        return -np.inf
    return lp + ll


@njit(cache=True)
def _logistic(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _log_logistic(z):
    # log(sigmoid(z)) computed stably
    if z >= 0:
        return -math.log1p(math.exp(-z))
    return z - math.log1p(math.exp(z))


@njit(cache=True)
def _unconstrain_kernel(theta, dim, lo, hi, is_unif, z):
    z[0] = theta[0]
    rem = 1.0
    for k in range(3):
        s = theta[1 + k] / rem
        z[1 + k] = math.log(s) - math.log1p(-s) + math.log(3.0 - k)
        rem -= theta[1 + k]
    z[4] = theta[4]
    for i in range(5, dim):
        u = (theta[i] - lo[i]) / (hi[i] - lo[i])
        z[i] = math.log(u) - math.log1p(-u)


@njit(cache=True)
def _constrain_kernel(z, dim, lo, hi, is_unif, theta):
    """Map unconstrained z to theta in place; returns log|det Jacobian|."""
    logj = 0.0
    theta[0] = z[0]
    rem = 1.0
    for k in range(3):
        zk = z[1 + k] - math.log(3.0 - k)
        s = _logistic(zk)
        theta[1 + k] = rem * s
        logj += _log_logistic(zk) + _log_logistic(-zk) + math.log(rem)
        rem -= theta[1 + k]
    theta[4] = z[4]
    for i in range(5, dim):
        w = hi[i] - lo[i]
        theta[i] = lo[i] + w * _logistic(z[i])
        logj += math.log(w) + _log_logistic(z[i]) + _log_logistic(-z[i])
    return logj


@njit(cache=True)
def hiv_logp_unconstrained(z, ctx):
    """Log posterior density on the unconstrained scale (sampler target).

    ``ctx`` is the vector built by :meth:`HivData.context`.
    """
    theta = np.empty(N_FOUNDERS)
    theta[N_FOUNDERS - 1] = 0.5
    out = np.empty(N_OUTPUTS)
    logj = _constrain_kernel(z, z.shape[0], _LO, _HI, _IS_UNIF, theta)
    # interior points of bounded founders can round onto the boundary
    for i in range(5, z.shape[0]):
        if not (_LO[i] < theta[i] < _HI[i]):
            return -np.inf
    lp = _log_post_kernel(theta, ctx, _LO, _HI, _IS_UNIF, out)
    return lp + logj


@njit(cache=True)
def _push_forward_kernel(thetas, scenario, pmsm_factor, pmsm_on):
    n = thetas.shape[0]
    res = np.empty((n, N_OUTPUTS))
    out = np.empty(N_OUTPUTS)
    for k in range(n):
        ok = _outputs_kernel(thetas[k], scenario, pmsm_factor, pmsm_on, out)
        if ok:
            res[k, :] = out
        else:
            res[k, :] = np.nan
    return res


@njit(cache=True)
def _constrain_many(zs, lo, hi, is_unif):
    n, dim = zs.shape
    thetas = np.full((n, N_FOUNDERS), 0.5)
    for k in range(n):
        _constrain_kernel(zs[k], dim, lo, hi, is_unif, thetas[k])
    return thetas


# ---------------------------------------------------------------------------
# Python-facing API

def derived_outputs(params, scenario=Scenario.BASE, pmsm_factor: float = 0.25,
                    include_pmsm: bool = True) -> dict[str, float]:
    """Deterministic descendants of the founders, keyed by ``OUTPUTS`` names.

    Raises ValueError when gamma1 == 0 (pi_GA undefined).
    """
    theta = _as_theta(params)
    scenario = Scenario.parse(scenario)
    out = np.empty(N_OUTPUTS)
    if not _outputs_kernel(theta, int(scenario), float(pmsm_factor), bool(include_pmsm), out):
        raise ValueError("degenerate parameters: gamma1 must be > 0")
    return dict(zip(OUTPUTS, out.tolist()))


def push_forward(thetas: np.ndarray, scenario=Scenario.BASE, pmsm_factor: float = 0.25,
                 include_pmsm: bool = True) -> np.ndarray:
    """Vectorised :func:`derived_outputs` over rows of a K x N_FOUNDERS array."""
    thetas = np.ascontiguousarray(thetas, dtype=float)
    return _push_forward_kernel(thetas, int(Scenario.parse(scenario)), float(pmsm_factor),
                                bool(include_pmsm))


def log_prior(params, scenario=Scenario.BASE) -> float:
    theta = _as_theta(params)
    return float(_log_prior_kernel(theta, int(Scenario.parse(scenario)), _LO, _HI, _IS_UNIF))


def log_likelihood(params, data: HivData, scenario=Scenario.BASE,
                   terms=LIKELIHOOD_TERMS) -> float:
    theta = _as_theta(params)
    ctx = data.context(scenario, terms)
    out = np.empty(N_OUTPUTS)
    if not _outputs_kernel(theta, int(Scenario.parse(scenario)), data.pmsm_factor,
                           data.include_pmsm, out):
        return -math.inf
    if not np.all(np.isfinite(out)):
        return -math.inf
    return float(_log_lik_kernel(theta, out, ctx))


def log_posterior(params, data: HivData, scenario=Scenario.BASE,
                  terms=LIKELIHOOD_TERMS) -> float:
    theta = _as_theta(params)
    ctx = data.context(scenario, terms)
    out = np.empty(N_OUTPUTS)
    return float(_log_post_kernel(theta, ctx, _LO, _HI, _IS_UNIF, out))


def to_unconstrained(params, scenario=Scenario.BASE) -> np.ndarray:
    """Unconstrained coordinates of the free founders under ``scenario``."""
    theta = _as_theta(params)
    dim = len(free_founders(scenario))
    z = np.empty(dim)
    _unconstrain_kernel(theta, dim, _LO, _HI, _IS_UNIF, z)
    return z


def from_unconstrained(z, scenario=Scenario.BASE) -> tuple[HivParams, float]:
    """Inverse of :func:`to_unconstrained`; also returns log|det dtheta/dz|."""
    z = np.asarray(z, dtype=float)
    dim = len(free_founders(scenario))
    if z.shape != (dim,):
        raise ValueError(f"expected {dim} unconstrained values, got shape {z.shape}")
    theta = np.full(N_FOUNDERS, 0.5)
    logj = _constrain_kernel(z, dim, _LO, _HI, _IS_UNIF, theta)
    return HivParams.from_array(theta), float(logj)


def constrain_draws(zs: np.ndarray) -> np.ndarray:
    """Map rows of unconstrained draws to K x N_FOUNDERS founder arrays."""
    return _constrain_many(np.ascontiguousarray(zs, dtype=float), _LO, _HI, _IS_UNIF)


def sample_prior(n: int, rng: np.random.Generator, scenario=Scenario.BASE) -> np.ndarray:
    """Direct Monte Carlo draws from the founder prior (K x N_FOUNDERS)."""
    theta = np.full((n, N_FOUNDERS), 0.5)
    theta[:, 0] = rng.normal(0.0, LOG_MU_POP_SD, n)
    theta[:, 1:4] = rng.dirichlet(np.ones(4), n)[:, :3]
    e = rng.normal(A_S_MEAN, A_S_SD, n)
    while np.any(e <= 0):      # truncation at 0 is practically never hit
        bad = e <= 0
        e[bad] = rng.normal(A_S_MEAN, A_S_SD, bad.sum())
    theta[:, 4] = np.log(e)
    names = free_founders(scenario)
    for name, (lo, hi) in UNIFORM_BOUNDS.items():
        if name in names:
            theta[:, _F[name]] = rng.uniform(lo, hi, n)
    return theta


# ---------------------------------------------------------------------------
# one-parameter conjugate sub-model, used to validate the sampler

@njit(cache=True)
def gum_anon_submodel_logp(z, ctx):
    """pi_GA ~ U(0,1) with only the GUM Anon binomial term; z = logit(pi_GA).

    ``ctx`` = (gA, gAN).  The exact posterior is Beta(gA + 1, gAN - gA + 1).
    """
    p = _logistic(z[0])
    if p <= 0.0 or p >= 1.0:
        return -np.inf
    return _binom_logpmf(ctx[0], ctx[1], p) + _log_logistic(z[0]) + _log_logistic(-z[0])


# ---------------------------------------------------------------------------
# sampling parameterisation
#
# SOPHID (y_M) pins the total diagnosed count mu_D and HANDD (y_H) pins
# p_H = a_H mu_DG / mu_D, so in logit coordinates (a_deltaG, a_deltaN,
# a_deltaP, a_H) live near a thin curved surface.  The sampler therefore
# replaces those four coordinates by
#
#   slot of a_H               lambda = log p_H
#   slot of first block group  s = log(sum of block diagnosed counts)
#   slots of other groups      psi_g = log(mu_Dg / mu_D,first)
#
# where the "block" is the groups whose diagnosed count depends on their
# a_delta (G is excluded in scenario (b), P when PMSM is switched off).  The
# map (s, psi) -> log counts has unit Jacobian; d a_g / d log mu_Dg =
# a_g (1 - delta_g) and d a_H / d lambda = a_H.  All other coordinates are
# as in to_unconstrained.

@njit(cache=True)
def _block_groups(ctx):
    scenario = int(ctx[20])
    pmsm_on = ctx[19] > 0.0
    groups = np.empty(3, dtype=np.int64)
    k = 0
    if scenario != 2:
        groups[k] = 0
        k += 1
    groups[k] = 1
    k += 1
    if pmsm_on:
        groups[k] = 2
        k += 1
    return groups[:k]


@njit(cache=True)
def _sampling_to_theta(y, ctx, theta, out):
    """Fill theta from sampling coordinates; returns log|dtheta/dy| (or -inf)."""
    dim = y.shape[0]
    scenario = int(ctx[20])
    pmsm_on = ctx[19] > 0.0
    groups = _block_groups(ctx)
    in_block = np.zeros(3, dtype=np.bool_)
    for g in groups:
        in_block[g] = True
    logj = 0.0
    theta[0] = y[0]
    rem = 1.0
    for k in range(3):
        zk = y[1 + k] - math.log(3.0 - k)
        s = _logistic(zk)
        theta[1 + k] = rem * s
        logj += _log_logistic(zk) + _log_logistic(-zk) + math.log(rem)
        rem -= theta[1 + k]
    theta[4] = y[4]
    for i in range(5, dim):
        if i == 5 or (6 <= i <= 8 and in_block[i - 6]):
            theta[i] = 0.5
            continue
        w = _HI[i] - _LO[i]
        theta[i] = _LO[i] + w * _logistic(y[i])
        logj += math.log(w) + _log_logistic(y[i]) + _log_logistic(-y[i])
    # prevalences and group sizes do not depend on the block coordinates
    if not _outputs_kernel(theta, scenario, ctx[18], pmsm_on, out):
        return -np.inf
    pibar = (out[9], out[13], out[17])
    r = (out[21], out[22], out[23])
    total = math.exp(y[6 + groups[0]])
    denom = 1.0
    for j in range(1, groups.shape[0]):
        denom += math.exp(y[6 + groups[j]])
    m_first = total / denom
    mu_D = total
    if scenario == 2:
        mu_D += out[27]       # deterministic mu_DG
    for j in range(groups.shape[0]):
        g = groups[j]
        m = m_first if j == 0 else m_first * math.exp(y[6 + g])
        big_r = r[g] * pibar[g]
        if not (m > 0.0 and big_r > 0.0 and np.isfinite(m)):
            return -np.inf
        delta = m / (m + big_r)
        a = delta / (1.0 - pibar[g])
        if not (0.0 < a < 1.0):
            return -np.inf
        theta[6 + g] = a
        logj += math.log(a) + math.log1p(-delta)
    if scenario == 2:
        mu_DG = out[27]
    elif groups[0] == 0:
        mu_DG = m_first
    else:
        mu_DG = m_first * math.exp(y[6])
    a_H = math.exp(y[5]) * mu_D / mu_DG
    if not (0.0 < a_H < 1.0):
        return -np.inf
    theta[5] = a_H
    logj += math.log(a_H)
    return logj


@njit(cache=True)
def _theta_to_sampling(theta, ctx, dim, y):
    scenario = int(ctx[20])
    out = np.empty(N_OUTPUTS)
    _unconstrain_kernel(theta, dim, _LO, _HI, _IS_UNIF, y)
    _outputs_kernel(theta, scenario, ctx[18], ctx[19] > 0.0, out)
    groups = _block_groups(ctx)
    m = (out[27], out[28], out[29])
    total = 0.0
    for g in groups:
        total += m[g]
    y[6 + groups[0]] = math.log(total)
    for j in range(1, groups.shape[0]):
        g = groups[j]
        y[6 + g] = math.log(m[g]) - math.log(m[groups[0]])
    y[5] = math.log(out[37])


@njit(cache=True)
def hiv_logp_sampling(y, ctx):
    """Log posterior in the sampler's reparameterised coordinates."""
    theta = np.empty(N_FOUNDERS)
    theta[N_FOUNDERS - 1] = 0.5
    out = np.empty(N_OUTPUTS)
    logj = _sampling_to_theta(y, ctx, theta, out)
    if not np.isfinite(logj):
        return -np.inf
    for i in range(5, y.shape[0]):
        if not (_LO[i] < theta[i] < _HI[i]):
            return -np.inf
    return _log_post_kernel(theta, ctx, _LO, _HI, _IS_UNIF, out) + logj


@njit(cache=True)
def _sampling_to_theta_many(ys, ctx):
    n = ys.shape[0]
    thetas = np.full((n, N_FOUNDERS), 0.5)
    out = np.empty(N_OUTPUTS)
    for k in range(n):
        _sampling_to_theta(ys[k], ctx, thetas[k], out)
    return thetas


def to_sampling(params, ctx: np.ndarray, scenario=Scenario.BASE) -> np.ndarray:
    theta = _as_theta(params)
    dim = len(free_founders(scenario))
    y = np.empty(dim)
    _theta_to_sampling(theta, np.asarray(ctx, dtype=float), dim, y)
    return y


def from_sampling_many(ys: np.ndarray, ctx: np.ndarray) -> np.ndarray:
    return _sampling_to_theta_many(np.ascontiguousarray(ys, dtype=float),
                                   np.asarray(ctx, dtype=float))
