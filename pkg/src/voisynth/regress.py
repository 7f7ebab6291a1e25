"""Nonparametric regression of an output on predictors for VoI estimation.

The main backend is multivariate adaptive regression splines (MARS):

* forward pass: starting from the intercept, repeatedly add the reflected
  hinge pair b(x) max(0, x - t), b(x) max(0, t - x) that most reduces the
  residual sum of squares, over parent terms b, predictors x not already in
  b (degree <= max_degree) and knots t;
* backward pass: drop terms one at a time (least RSS increase first) and
  keep the subset with the smallest generalised cross-validation score
  GCV = (RSS/K) / (1 - C/K)^2, with C = M + d (M - 1) for M terms.

For a given parent and predictor the pair spans the same space as
{b x, b max(0, x - t)} once b is in the basis, so every knot is scored in
O(K M) total with suffix sums over the sorted predictor instead of a fresh
least-squares solve per knot.

A total-degree-3 polynomial fit is provided as a cheap fallback.
"""

from __future__ import annotations

import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

log = logging.getLogger(__name__)


class RegressionError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_terms: int = 21
    max_degree: int = 2
    penalty: float = 3.0
    threshold: float = 1e-4
    backend: str = "mars"
    max_knots: int = 1023

    def __post_init__(self):
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        if self.backend not in ("mars", "polynomial"):
            raise ValueError(f"unknown backend {self.backend!r}")


# a hinge factor is (predictor index, sign, knot): sign +1 -> max(0, x - knot)
Hinge = tuple[int, int, float]
Term = tuple[Hinge, ...]


def _eval_term(term: Term, X: np.ndarray) -> np.ndarray:
    col = np.ones(X.shape[0])
    for j, sign, knot in term:
        col = col * np.maximum(0.0, sign * (X[:, j] - knot))
    return col


@dataclass
class MarsModel:
    """Fitted hinge-basis regression.

    ``fitted`` and ``resid`` refer to the training data; ``basis`` holds the
    training basis matrix (not serialised).
    """

    terms: tuple[Term, ...]
    coef: np.ndarray
    gcv: float
    n_predictors: int
    fitted: np.ndarray = field(repr=False)
    resid: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)
    rss_path: list = field(default_factory=list, repr=False)
    warnings: list = field(default_factory=list)
    backend = "mars"

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def basis_matrix(self, X: np.ndarray) -> np.ndarray:
        X = _as_2d(X)
        if X.shape[1] != self.n_predictors:
            raise ValueError(f"model has {self.n_predictors} predictors, X has {X.shape[1]}")
        return np.column_stack([_eval_term(t, X) for t in self.terms])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.basis_matrix(X) @ self.coef

    def to_json(self) -> dict:
        return {
            "backend": "mars",
            "n_predictors": self.n_predictors,
            "gcv": self.gcv,
            "terms": [[{"predictor": j, "sign": s, "knot": k} for j, s, k in t]
                      for t in self.terms],
            "coefficients": self.coef.tolist(),
        }


@dataclass
class PolynomialModel:
    """Least-squares fit on all monomials of total degree <= 3 in the
    standardised predictors.  Coefficients refer to the monomials."""

    powers: tuple[tuple[int, ...], ...]
    center: np.ndarray
    scale: np.ndarray
    coef: np.ndarray
    gcv: float
    n_predictors: int
    fitted: np.ndarray = field(repr=False)
    resid: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)
    warnings: list = field(default_factory=list)
    backend = "polynomial"

    @property
    def n_terms(self) -> int:
        return len(self.powers)

    def basis_matrix(self, X: np.ndarray) -> np.ndarray:
        X = _as_2d(X)
        if X.shape[1] != self.n_predictors:
            raise ValueError(f"model has {self.n_predictors} predictors, X has {X.shape[1]}")
        Z = (X - self.center) / self.scale
        return np.column_stack([np.prod(Z ** np.array(pw), axis=1) for pw in self.powers])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.basis_matrix(X) @ self.coef

    def to_json(self) -> dict:
        return {"backend": "polynomial", "n_predictors": self.n_predictors, "gcv": self.gcv,
                "powers": [list(p) for p in self.powers], "center": self.center.tolist(),
                "scale": self.scale.tolist(), "coefficients": self.coef.tolist()}


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def gcv_score(rss: float, n_obs: int, n_terms: int, penalty: float) -> float:
    c = n_terms + penalty * (n_terms - 1)
    if c >= n_obs:
        return float("inf")
    return rss / n_obs / (1.0 - c / n_obs) ** 2


def fit(X, y, config: FitConfig | None = None) -> MarsModel | PolynomialModel:
    """Regress ``y`` on the columns of ``X``."""
    config = config or FitConfig()
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    K, p = X.shape
    if y.shape[0] != K:
        raise ValueError(f"X has {K} rows, y has {y.shape[0]}")
    if p < 1:
        raise ValueError("need at least one predictor")
    if K <= 3 * p:
        raise RegressionError(f"insufficient draws: K={K} for p={p} predictors")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in regression inputs")
    if config.backend == "polynomial" or (p == 1 and K < 500):
        return _fit_polynomial(X, y, config)
    return _fit_mars(X, y, config)


# ---------------------------------------------------------------------------
# MARS

def _knot_positions(xs_sorted: np.ndarray, max_knots: int) -> np.ndarray:
    """Candidate knots: distinct interior values, thinned to evenly spaced order statistics."""
    uniq = np.unique(xs_sorted)
    if uniq.size <= 2:
        return uniq[:0] if uniq.size < 2 else uniq[:1]
    interior = uniq[:-1]   # a knot at the maximum gives an all-zero hinge
    if interior.size > max_knots:
        idx = np.unique(np.linspace(0, interior.size - 1, max_knots).round().astype(int))
        interior = interior[idx]
    return interior


class _Orthobasis:
    """Incrementally grown orthonormal basis of the model's column space."""

    def __init__(self, K: int, capacity: int):
        self.Q = np.empty((K, capacity))
        self.m = 0

    @property
    def cols(self) -> np.ndarray:
        return self.Q[:, :self.m]

    def residualise(self, v: np.ndarray) -> np.ndarray:
        Q = self.cols
        for _ in range(2):          # twice is enough (Kahan/Parlett)
            v = v - Q @ (Q.T @ v)
        return v

    def try_add(self, v: np.ndarray, rel_tol: float = 1e-9) -> bool:
        norm0 = np.linalg.norm(v)
        if norm0 == 0.0:
            return False
        u = self.residualise(v)
        nu = np.linalg.norm(u)
        if nu <= rel_tol * norm0:
            return False
        self.Q[:, self.m] = u / nu
        self.m += 1
        return True


def _best_knot(b, x, order, knots, Q, r):
    """Best single hinge b*max(0, x - t) added on top of span(Q) (r ⟂ Q).

    Returns (gain, knot) or (0, None).
    """
    xs = x[order]
    bs = b[order]
    keep = bs != 0.0
    if not np.any(keep):
        return 0.0, None
    center = np.median(xs[keep])
    xs = xs - center
    t = knots - center
    # start index of the x > t suffix for each knot
    start = np.searchsorted(xs, t, side="right")
    ok = start < xs.shape[0]
    if not np.any(ok):
        return 0.0, None
    start = start[ok]
    t = t[ok]
    kn = knots[ok]

    def suffix(w):
        # suffix sums S[i] = sum_{i' >= i} w[i'], evaluated at start
        cs = np.cumsum(w[::-1], axis=0)[::-1]
        return cs[start]

    bx = bs * xs
    Qs = Q[order] * bs[:, None]
    rs = r[order]
    W0 = np.column_stack([bs * rs, bs * bs, Qs])
    W1 = W0 * xs[:, None]
    S0 = suffix(W0)
    S1 = suffix(W1)
    S2 = suffix(bs * bs * xs * xs)
    cr = S1[:, 0] - t * S0[:, 0]
    cc = S2 - 2.0 * t * S1[:, 1] + t * t * S0[:, 1]
    qc = S1[:, 2:] - t[:, None] * S0[:, 2:]
    denom = cc - np.einsum("ij,ij->i", qc, qc)
    valid = (cc > 0.0) & (denom > 1e-9 * cc)
    if not np.any(valid):
        return 0.0, None
    gain = np.where(valid, cr * cr / np.where(valid, denom, 1.0), -np.inf)
    k = int(np.argmax(gain))
    if not np.isfinite(gain[k]) or gain[k] <= 0.0:
        return 0.0, None
    del bx
    return float(gain[k]), float(kn[k])


def _fit_mars(X, y, config: FitConfig) -> MarsModel:
    K, p_all = X.shape
    notes = []
    max_terms = config.max_terms
    if K <= 10 * max_terms:
        max_terms = max(1, (K - 1) // 10)
        notes.append(f"max_terms reduced to {max_terms} for K={K}")
    active = [j for j in range(p_all) if np.ptp(X[:, j]) > 0.0]
    if len(active) < p_all:
        msg = f"constant predictor columns dropped: {sorted(set(range(p_all)) - set(active))}"
        warnings.warn(msg)
        notes.append(msg)

    orders = {j: np.argsort(X[:, j], kind="stable") for j in active}
    knots = {j: _knot_positions(X[orders[j], j], config.max_knots) for j in active}

    terms: list[Term] = [()]
    cols = [np.ones(K)]
    ob = _Orthobasis(K, max_terms + 2)
    ob.try_add(cols[0])
    r = y - y.mean()
    tss = float(r @ r)
    rss_path = [tss]

    while len(terms) < max_terms and tss > 0.0:
        rss = float(r @ r)
        if rss <= 1e-12 * tss:
            break
        best = None   # (gain, parent index, predictor, knot)
        for pi, parent in enumerate(terms):
            if len(parent) >= config.max_degree:
                continue
            used = {h[0] for h in parent}
            b = cols[pi]
            for j in active:
                if j in used or knots[j].size == 0:
                    continue
                x = X[:, j]
                # add the linear companion b*x first, then scan knots
                u = ob.residualise(b * (x - np.median(x)))
                nu = np.linalg.norm(u)
                Q = ob.cols
                rr = r
                gain0 = 0.0
                if nu > 1e-9 * np.linalg.norm(b * x):
                    qu = u / nu
                    proj = qu @ r
                    gain0 = proj * proj
                    rr = r - qu * proj
                    Q = np.column_stack([Q, qu])
                g, t = _best_knot(b, x, orders[j], knots[j], Q, rr)
                total = gain0 + g
                if t is None:
                    # every hinge is collinear with the linear companion (e.g. a
                    # two-valued predictor); score the hinge on its own
                    total, t = _best_knot(b, x, orders[j], knots[j], ob.cols, r)
                if t is None:
                    continue
                if best is None or total > best[0] * (1.0 + 1e-12):
                    best = (total, pi, j, t)
        if best is None or best[0] < config.threshold * tss:
            break
        _, pi, j, t = best
        parent = terms[pi]
        added = 0
        for sign in (1, -1):
            if len(terms) >= max_terms:
                break
            term = parent + ((j, sign, t),)
            col = _eval_term(term, X)
            if ob.try_add(col):
                terms.append(term)
                cols.append(col)
                added += 1
            else:
                log.debug("hinge %s is collinear with the basis; skipped", term)
        if added == 0:
            break
        r = y - y.mean()
        r = r - ob.cols @ (ob.cols.T @ r)
        rss_path.append(float(r @ r))

    B = np.column_stack(cols)
    keep = _backward_prune(B, y, config.penalty)
    terms = [terms[i] for i in keep]
    B = B[:, keep]
    coef, fitted, resid = _lstsq(B, y)
    rss = float(resid @ resid)
    model = MarsModel(tuple(terms), coef, gcv_score(rss, K, len(terms), config.penalty),
                      p_all, fitted, resid, B, rss_path, notes)
    return model


def _lstsq(B, y):
    coef, *_ = np.linalg.lstsq(B, y, rcond=None)
    fitted = B @ coef
    return coef, fitted, y - fitted


def _backward_prune(B, y, penalty) -> list[int]:
    """Indices of the GCV-optimal subset (intercept, column 0, always kept)."""
    K, M = B.shape
    if M == 1:
        return [0]
    # work with intercept-centred columns so RSS(S) = yc'yc - h_S' G_S^-1 h_S
    Bc = B[:, 1:] - B[:, 1:].mean(axis=0)
    norms = np.linalg.norm(Bc, axis=0)
    norms[norms == 0.0] = 1.0
    Bc = Bc / norms
    yc = y - y.mean()
    G = Bc.T @ Bc
    h = Bc.T @ yc
    yy = float(yc @ yc)

    def rss_of(idx):
        if not idx:
            return yy
        Gs = G[np.ix_(idx, idx)]
        hs = h[idx]
        try:
            sol = linalg.solve(Gs, hs, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            sol = np.linalg.lstsq(Gs, hs, rcond=None)[0]
        return max(yy - float(hs @ sol), 0.0)

    current = list(range(M - 1))
    best_subset = list(current)
    best_gcv = gcv_score(rss_of(current), K, len(current) + 1, penalty)
    while current:
        trials = []
        for pos in range(len(current)):
            cand = current[:pos] + current[pos + 1:]
            trials.append((rss_of(cand), pos))
        rss_min = min(t[0] for t in trials)
        # prefer removing the latest-added term on (near) ties
        pos = max(t[1] for t in trials if t[0] <= rss_min * (1 + 1e-12) + 1e-300)
        current = current[:pos] + current[pos + 1:]
        g = gcv_score(rss_min, K, len(current) + 1, penalty)
        if g <= best_gcv:
            best_gcv = g
            best_subset = list(current)
    return [0] + [i + 1 for i in best_subset]


# ---------------------------------------------------------------------------
# polynomial fallback

def _fit_polynomial(X, y, config: FitConfig, degree: int = 3) -> PolynomialModel:
    K, p = X.shape
    notes = []
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    const = scale == 0.0
    if np.any(const):
        msg = f"constant predictor columns dropped: {np.where(const)[0].tolist()}"
        warnings.warn(msg)
        notes.append(msg)
    scale = np.where(const, 1.0, scale)
    live = [j for j in range(p) if not const[j]]
    powers = [tuple([0] * p)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(live, deg):
            pw = [0] * p
            for j in combo:
                pw[j] += 1
            powers.append(tuple(pw))
    while len(powers) > 1 and K <= 3 * len(powers):
        powers.pop()
    Z = (X - center) / scale
    B = np.column_stack([np.prod(Z ** np.array(pw), axis=1) for pw in powers])
    # orthogonalise for the solve, then map back to monomial coefficients
    Qm, R, piv = linalg.qr(B, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    if rank < len(powers):
        dropped = sorted(piv[rank:].tolist())
        notes.append(f"rank-deficient polynomial basis; dropped terms {dropped}")
        warnings.warn(notes[-1])
        keep = sorted(piv[:rank].tolist())
        powers = [powers[i] for i in keep]
        B = B[:, keep]
    coef, fitted, resid = _lstsq(B, y)
    rss = float(resid @ resid)
    return PolynomialModel(tuple(powers), center, scale, coef,
                           gcv_score(rss, K, len(powers), config.penalty), p,
                           fitted, resid, B, notes)


def predict(model, X) -> np.ndarray:
    return model.predict(X)


def coefficient_draws(model, n_draws: int, seed=None) -> np.ndarray:
    """Draws from the asymptotic normal distribution of the coefficients,
    N(coef, s^2 (B'B)^-1) with s^2 = RSS / (K - terms)."""
    B = model.basis
    K, M = B.shape
    rss = float(model.resid @ model.resid)
    dof = K - M
    if dof <= 0:
        raise RegressionError("no residual degrees of freedom")
    sigma = np.sqrt(rss / dof)
    _, R = np.linalg.qr(B, mode="reduced")
    d = np.abs(np.diag(R))
    if d.min() <= 1e-12 * max(d.max(), 1e-300):
        raise RegressionError("singular basis Gram matrix")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((M, n_draws))
    # (B'B)^-1 = R^-1 R^-T, so R^-1 z has the right covariance
    dev = linalg.solve_triangular(R, z, lower=False)
    return model.coef[None, :] + sigma * dev.T


def dump_json(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh, indent=2)
        fh.write("\n")
