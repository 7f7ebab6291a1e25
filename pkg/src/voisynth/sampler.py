"""Adaptive random-walk Metropolis for the HIV synthesis model.

Each iteration is a Metropolis-within-Gibbs sweep: one Gaussian random-walk
proposal per unconstrained coordinate, with per-coordinate log step sizes
tuned by Robbins-Monro toward ``target_accept`` during burn-in only.  With
``block=True`` every sweep is followed by a joint proposal whose covariance
is the running empirical covariance of the burn-in draws (Haario-style),
scaled 2.38^2/d and tuned toward an acceptance rate of 0.234.

Random numbers are generated outside the jitted kernel from one Philox
stream per chain (spawned from a single ``SeedSequence``), so results do
not depend on thread scheduling.

Convergence diagnostics use split chains: each chain is halved, giving
2m sequences of length n.  With W the mean within-sequence variance and
B/n the variance of the sequence means,

    var_plus = (n - 1)/n * W + B/n,      R-hat = sqrt(var_plus / W).

Effective sample size follows Geyer's initial monotone positive sequence on
the multi-chain autocorrelation estimate.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from voisynth import hiv_model as hm
from voisynth.samples import SampleTable

log = logging.getLogger(__name__)

INIT_RETRIES = 100


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    chains: int = 4
    iterations: int = 37_500      # post-burn-in draws kept per chain
    burnin: int = 20_000
    thin: int = 1
    seed: int = 1
    target_accept: float = 0.44
    init_jitter: float = 0.1
    block: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burnin < 0:
            raise ValueError("burnin must be >= 0")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")

    @classmethod
    def for_total_draws(cls, draws: int, chains: int = 4, **kw) -> "ChainConfig":
        return cls(chains=chains, iterations=max(1, -(-draws // chains)), **kw)


@dataclass
class Diagnostics:
    rhat: dict[str, float] = field(default_factory=dict)
    ess: dict[str, float] = field(default_factory=dict)
    acceptance: list[float] = field(default_factory=list)
    block_acceptance: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def max_rhat(self) -> float:
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return max(vals) if vals else float("nan")

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# kernel

@njit(nogil=True)
def _chain_kernel(logp, ctx, z0, n_burn, n_keep, thin, target, normals, log_u,
                  block, block_normals, block_log_u):
    dim = z0.shape[0]
    n_total = n_burn + n_keep * thin
    out = np.empty((n_keep, dim))
    z = z0.copy()
    lp = logp(z, ctx)
    log_scale = np.full(dim, math.log(0.5))
    acc_keep = np.zeros(dim)
    # running moments for the block proposal
    mean = z.copy()
    m2 = np.zeros((dim, dim))
    n_seen = 1
    chol = np.eye(dim) * 0.1
    block_log_scale = 0.0
    block_acc = 0
    block_tried = 0
    kept = 0
    for t in range(n_total):
        burning = t < n_burn
        gamma = 1.0 / math.sqrt(t + 1.0)
        for j in range(dim):
            old = z[j]
            z[j] = old + math.exp(log_scale[j]) * normals[t, j]
            lp_new = logp(z, ctx)
            accept = log_u[t, j] < lp_new - lp
            if accept:
                lp = lp_new
            else:
                z[j] = old
            if burning:
                log_scale[j] += gamma * ((1.0 if accept else 0.0) - target)
            elif accept:
                acc_keep[j] += 1.0
        if block and n_seen > 2 * dim:
            step = chol @ block_normals[t]
            zb = z + math.exp(block_log_scale) * (2.38 / math.sqrt(dim)) * step
            lp_new = logp(zb, ctx)
            accept = block_log_u[t] < lp_new - lp
            if accept:
                z[:] = zb
                lp = lp_new
            if burning:
                block_log_scale += gamma * ((1.0 if accept else 0.0) - 0.234)
            else:
                block_tried += 1
                if accept:
                    block_acc += 1
        if burning:
            # Welford update of the running covariance (second half of burn-in)
            if t >= n_burn // 2:
                n_seen += 1
                delta = z - mean
                mean += delta / n_seen
                m2 += np.outer(delta, z - mean)
                if n_seen > 2 * dim and (n_seen % 200 == 0 or t == n_burn - 1):
                    cov = m2 / (n_seen - 1) + 1e-10 * np.eye(dim)
                    chol = np.linalg.cholesky(cov)
        else:
            s = t - n_burn
            if s % thin == 0 and kept < n_keep:
                out[kept] = z
                kept += 1
    n_post = max(n_keep * thin, 1)
    block_rate = block_acc / block_tried if block_tried > 0 else np.nan
    return out, acc_keep / n_post, block_rate


def sample_target(logp, ctx: np.ndarray, inits: np.ndarray, config: ChainConfig):
    """Run ``config.chains`` chains of a jitted target ``logp(z, ctx)``.

    ``inits`` is (chains, dim).  Returns (draws[chains, iterations, dim],
    per-chain mean coordinate acceptance, per-chain block acceptance).
    """
    inits = np.atleast_2d(np.asarray(inits, dtype=float))
    if inits.shape[0] != config.chains:
        raise ValueError(f"need {config.chains} initial points, got {inits.shape[0]}")
    dim = inits.shape[1]
    n_total = config.burnin + config.iterations * config.thin
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    ctx = np.ascontiguousarray(ctx, dtype=float)

    def one(c):
        rng = np.random.Generator(np.random.Philox(seeds[c]))
        normals = rng.standard_normal((n_total, dim))
        log_u = np.log(rng.random((n_total, dim)))
        bn = rng.standard_normal((n_total, dim)) if config.block else np.zeros((1, dim))
        bu = np.log(rng.random(n_total)) if config.block else np.zeros(1)
        return _chain_kernel(logp, ctx, inits[c].copy(), config.burnin, config.iterations,
                             config.thin, config.target_accept, normals, log_u,
                             config.block, bn, bu)

    if config.threads > 1 and config.chains > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as ex:
            results = list(ex.map(one, range(config.chains)))
    else:
        results = [one(c) for c in range(config.chains)]
    draws = np.stack([r[0] for r in results])
    acc = [float(np.mean(r[1])) for r in results]
    bacc = [float(r[2]) for r in results]
    return draws, acc, bacc


def _hiv_inits(data, scenario, terms, config: ChainConfig, ctx, reparam) -> np.ndarray:
    scenario = hm.Scenario.parse(scenario)
    dim = len(hm.free_founders(scenario))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, 7919])))
    inits = np.empty((config.chains, dim))
    for c in range(config.chains):
        for _ in range(INIT_RETRIES):
            theta = hm.sample_prior(1, rng, scenario)[0]
            if "pop" in terms:
                # the N(0, 1000^2) prior on log(mu_pop) is effectively flat; start
                # near the data instead of at an astronomically large population
                theta[0] = math.log(max(data.y_pop, 1))
            if reparam:
                if not np.isfinite(hm.log_posterior(theta, data, scenario, terms)):
                    continue
                z = hm.to_sampling(theta, ctx, scenario)
                target = hm.hiv_logp_sampling
            else:
                z = hm.to_unconstrained(theta, scenario)
                target = hm.hiv_logp_unconstrained
            z = z + config.init_jitter * rng.standard_normal(dim)
            if np.isfinite(target(z, ctx)):
                inits[c] = z
                break
        else:
            raise SamplerError(
                f"no finite log-posterior after {INIT_RETRIES} initialisation attempts "
                f"(chain {c})")
    return inits


def run_chains(data: hm.HivData, scenario="base", config: ChainConfig | None = None,
               terms=hm.LIKELIHOOD_TERMS, outputs=None) -> tuple[SampleTable, Diagnostics]:
    """Posterior draws of founders and derived outputs, pooled chain-major.

    ``outputs`` restricts the derived columns (default: all of
    ``hiv_model.OUTPUTS``); the prior-only configuration needs this because
    count outputs overflow under the vague population prior.
    """
    config = config or ChainConfig()
    scenario = hm.Scenario.parse(scenario)
    terms = tuple(terms)
    ctx = data.context(scenario, terms)
    # the diagnosed-count reparameterisation needs finite group sizes, which
    # the vague population prior does not guarantee without the data terms
    reparam = "sophid" in terms and "pop" in terms
    inits = _hiv_inits(data, scenario, terms, config, ctx, reparam)
    target = hm.hiv_logp_sampling if reparam else hm.hiv_logp_unconstrained
    draws, acc, bacc = sample_target(target, ctx, inits, config)
    n_chains, n_iter, dim = draws.shape
    flat = draws.reshape(-1, dim)
    thetas = hm.from_sampling_many(flat, ctx) if reparam else hm.constrain_draws(flat)
    founders = hm.free_founders(scenario)
    outs = hm.push_forward(thetas, scenario, data.pmsm_factor, data.include_pmsm)
    out_names = hm.OUTPUTS if outputs is None else tuple(outputs)
    idx = [hm.OUTPUTS.index(n) for n in out_names]
    values = np.hstack([thetas[:, :len(founders)], outs[:, idx]])
    meta = {
        "seed": config.seed,
        "chains": config.chains,
        "draws_per_chain": n_iter,
        "burnin": config.burnin,
        "thin": config.thin,
        "scenario": scenario.tag,
        "likelihood_terms": list(terms),
        "synthetic_fields": list(data.synthetic),
    }
    table = SampleTable(tuple(founders) + tuple(out_names), values, meta)
    diag = diagnostics(table)
    diag.acceptance = acc
    diag.block_acceptance = bacc
    table.meta["max_rhat"] = diag.max_rhat()
    table.meta["rhat"] = diag.rhat
    return table, diag


def run_target(logp, ctx, inits, config: ChainConfig, names) -> tuple[SampleTable, Diagnostics]:
    """Generic version of :func:`run_chains` for any jitted target (no push-forward)."""
    draws, acc, bacc = sample_target(logp, ctx, inits, config)
    n_chains, n_iter, dim = draws.shape
    table = SampleTable(tuple(names), draws.reshape(-1, dim),
                        {"seed": config.seed, "chains": n_chains, "draws_per_chain": n_iter})
    diag = diagnostics(table)
    diag.acceptance = acc
    diag.block_acceptance = bacc
    return table, diag


# ---------------------------------------------------------------------------
# diagnostics

def split_chains(table: SampleTable) -> np.ndarray:
    """(chains, draws_per_chain, V) view of a pooled chain-major table."""
    m = int(table.meta.get("chains", 1))
    n = table.K // m
    if m * n != table.K:
        raise ValueError("table length is not a multiple of the chain count")
    return table.draws.reshape(m, n, -1)


def split_rhat(chains: np.ndarray) -> float:
    """Split-R-hat for a (m, n) array of m chains."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    half = n // 2
    if half < 2:
        return float("nan")
    seqs = np.concatenate([chains[:, :half], chains[:, n - half:]])
    return _rhat(seqs)


def _rhat(seqs: np.ndarray) -> float:
    _, n = seqs.shape
    w = seqs.var(axis=1, ddof=1).mean()
    b_over_n = seqs.mean(axis=1).var(ddof=1)
    if w <= 0.0:
        return 1.0 if b_over_n <= 0.0 else float("inf")
    var_plus = (n - 1) / n * w + b_over_n
    return float(math.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    x = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    ac = np.fft.irfft(f * np.conj(f), size)[..., :n]
    return ac / n


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS of a (m, n) array (split chains), capped at m*n."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    half = n // 2
    if half < 4:
        return float(m * n)
    seqs = np.concatenate([chains[:, :half], chains[:, n - half:]])
    m2, n2 = seqs.shape
    acov = _autocov(seqs)
    w = acov[:, 0].mean() * n2 / (n2 - 1)
    if w <= 0:
        return float(m * n)
    var_plus = (n2 - 1) / n2 * w + seqs.mean(axis=1).var(ddof=1) if m2 > 1 else w
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer initial monotone positive sequence
    tau = -1.0
    prev = math.inf
    for t in range(0, n2 - 1, 2):
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        p = min(p, prev)
        tau += 2.0 * p
        prev = p
    ess = m2 * n2 / max(tau, 1e-12)
    return float(min(ess, m * n))


def diagnostics(table: SampleTable) -> Diagnostics:
    """Per-column split-R-hat and ESS; chain layout comes from ``table.meta``."""
    arr = split_chains(table)
    m = arr.shape[0]
    diag = Diagnostics()
    if m < 2:
        msg = "single chain: R-hat omitted"
        warnings.warn(msg)
        diag.warnings.append(msg)
    for j, name in enumerate(table.names):
        x = arr[:, :, j]
        if m >= 2:
            diag.rhat[name] = split_rhat(x)
        diag.ess[name] = effective_sample_size(x)
    return diag


def mc_standard_error(chains: np.ndarray) -> float:
    """Monte Carlo SE of the mean of a (m, n) chain array."""
    chains = np.asarray(chains, dtype=float)
    return float(chains.std(ddof=1) / math.sqrt(effective_sample_size(chains)))
