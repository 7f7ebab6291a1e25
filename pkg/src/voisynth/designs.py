"""Future-study designs: simulate data per posterior draw and reduce it to
the low-dimensional statistic used as the EVSI regression predictor.

Randomness is common across sample sizes: for a given (seed, design kind)
row k always receives the same uniforms, and binomial counts are obtained
by inversion.  Statistics for neighbouring n are then strongly coupled,
which keeps EVSI curves smooth in n.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .samples import SampleTable

KINDS = ("gumanon", "gmshs", "binomial")

# observed GMSHS split of previously-undiagnosed MSM: 493 GUM attenders of 945
GMSHS_OBSERVED_SPLIT = 493 / 945

_U_EPS = 1e-12


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class DesignSpec:
    """A future study of size ``n``.

    ``kind`` is ``gumanon`` (extra GUM Anon tests, reads pi_GA), ``gmshs``
    (extra GMSHS survey, reads p_GM_G, p_GM_N, rho_G, rho_N) or ``binomial``
    (y ~ Bin(n, p) for the probability column named by ``parameter``).
    ``fixed_split`` replaces the per-draw GUM attendance probability of the
    GMSHS design by the observed 493/945.
    """

    kind: str
    n: int
    seed: int = 0
    parameter: str | None = None
    fixed_split: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DesignError(f"unknown design kind {self.kind!r}; expected one of {KINDS}")
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 0:
            raise DesignError(f"n must be a non-negative integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if self.kind == "binomial" and not self.parameter:
            raise DesignError("binomial design needs a parameter column")

    @classmethod
    def from_json(cls, text_or_dict) -> "DesignSpec":
        d = json.loads(text_or_dict) if isinstance(text_or_dict, str) else dict(text_or_dict)
        unknown = set(d) - {"kind", "n", "seed", "parameter", "fixed_split"}
        if unknown:
            raise DesignError(f"unknown design fields {sorted(unknown)}")
        if "kind" not in d or "n" not in d:
            raise DesignError("design needs 'kind' and 'n'")
        return cls(**d)

    def with_n(self, n: int) -> "DesignSpec":
        return DesignSpec(self.kind, n, self.seed, self.parameter, self.fixed_split)

    def required_columns(self) -> tuple[str, ...]:
        if self.kind == "gumanon":
            return ("pi_GA",)
        if self.kind == "gmshs":
            return ("p_GM_G", "p_GM_N") if self.fixed_split else ("p_GM_G", "p_GM_N", "rho_G", "rho_N")
        return (self.parameter,)

    @property
    def statistic_name(self) -> str:
        if self.kind == "gmshs":
            return "T_gmshs"
        if self.kind == "gumanon":
            return "T_gumanon"
        return f"T_{self.parameter}"


def _uniforms(seed: int, kind: str, n_rows: int, n_streams: int) -> np.ndarray:
    """n_rows x n_streams uniforms; row k is the same for every table size >= k."""
    key = zlib.crc32(kind.encode())
    out = np.empty((n_rows, n_streams))
    for s in range(n_streams):
        ss = np.random.SeedSequence([int(seed), key, s])
        out[:, s] = np.random.Generator(np.random.Philox(ss)).random(n_rows)
    return np.clip(out, _U_EPS, 1.0 - _U_EPS)


def _binom_inv(u, n, p) -> np.ndarray:
    p = np.clip(p, 0.0, 1.0)
    return stats.binom.ppf(u, n, p).astype(float)


def _odds(p):
    return p / (1.0 - p)


def gmshs_statistic(y_g, n_g, y_n, n_n):
    """Smoothed odds ratio of HIV in non-attenders vs attenders."""
    p_n = (np.asarray(y_n, float) + 0.5) / (np.asarray(n_n, float) + 1.0)
    p_g = (np.asarray(y_g, float) + 0.5) / (np.asarray(n_g, float) + 1.0)
    return _odds(p_n) / _odds(p_g)


def simulate_statistics(design: DesignSpec, table: SampleTable) -> SampleTable:
    """One statistic column with a value per posterior draw in ``table``."""
    missing = [c for c in design.required_columns() if c not in table]
    if missing:
        raise DesignError(f"design {design.kind!r} needs columns missing from the table: {missing}")
    K, n = table.K, design.n
    name = design.statistic_name
    meta = {"design": {"kind": design.kind, "n": n, "seed": design.seed,
                       "parameter": design.parameter, "fixed_split": design.fixed_split}}
    if n == 0:
        return SampleTable((name,), np.full((K, 1), 0.5), meta)

    if design.kind in ("gumanon", "binomial"):
        col = "pi_GA" if design.kind == "gumanon" else design.parameter
        u = _uniforms(design.seed, design.kind, K, 1)
        y = _binom_inv(u[:, 0], n, table[col])
        return SampleTable((name,), (y / n).reshape(-1, 1), meta)

    u = _uniforms(design.seed, "gmshs", K, 3)
    if design.fixed_split:
        q = np.full(K, GMSHS_OBSERVED_SPLIT)
    else:
        q = table["rho_G"] / (table["rho_G"] + table["rho_N"])
    n_g = _binom_inv(u[:, 0], n, q)
    n_n = n - n_g
    y_g = _binom_inv(u[:, 1], n_g, table["p_GM_G"])
    y_n = _binom_inv(u[:, 2], n_n, table["p_GM_N"])
    T = gmshs_statistic(y_g, n_g, y_n, n_n)
    return SampleTable((name,), T.reshape(-1, 1), meta)
