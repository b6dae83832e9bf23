"""Exponential-sum and Gaussian-basis fits of radial decay profiles.

Power-law profiles ``V(x, y) = r**a`` on the integer disc are approximated
in two stages: first ``r**(a/2)`` is fitted on integer ``r`` by a sum of
complex exponentials (Hankel matrix-pencil bases plus linear least-squares
weights), and the substitution ``r -> r**2`` turns each base ``lam_k`` into
a Gaussian ``exp(-mu_k r**2)`` with ``mu_k = -log(lam_k)``.  Each Gaussian
is then itself expanded as a short exponential sum so that the compiled
rule tables can transport it along lattice legs, and finally the Gaussian
weights are re-solved by least squares on the disc.

The separable basis functions are evaluated with the convention that a
zero leg contributes the exact factor 1 (the compiled operators carry no
leg at zero displacement), not the fitted value of the expansion at 0.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ExpSum",
    "GaussianBasis",
    "FitConfig",
    "fit_exp_sum",
    "gaussian_to_expsum",
    "fit_power_law",
    "eval_basis",
    "save_basis",
    "load_basis",
]


@dataclass(frozen=True)
class ExpSum:
    """A finite sum ``f(r) = sum_i s_i * lam_i**r`` with ``|lam_i| <= 1``."""

    terms: tuple[tuple[complex, complex], ...]
    flagged: bool = False  # rank deficiency or unit-circle projection occurred

    def __post_init__(self):
        object.__setattr__(
            self, "terms", tuple((complex(s), complex(l)) for s, l in self.terms)
        )
        for _, lam in self.terms:
            if abs(lam) > 1 + 1e-9:
                raise ValueError(f"growing base |lambda| = {abs(lam)} > 1")

    @property
    def n(self) -> int:
        return len(self.terms)

    def __call__(self, r) -> np.ndarray | complex:
        r_arr = np.asarray(r, dtype=float)
        out = np.zeros(r_arr.shape, dtype=complex)
        for s, lam in self.terms:
            out = out + s * lam ** r_arr
        return out if out.shape else complex(out)


@dataclass(frozen=True)
class GaussianBasis:
    """Weighted sum of separable Gaussians, each expanded in exponentials."""

    weights: tuple[complex, ...]          # t_k
    mus: tuple[complex, ...]              # mu_k = -log lam_k
    expsums: tuple[ExpSum, ...]           # expansion of exp(-mu_k r^2) per k
    exponent: float                       # the fitted power a
    sup_error: float
    l2_error: float
    r_cut: float
    complex_mu: bool = False              # some mu_k acquired an imaginary part

    @property
    def k_max(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class FitConfig:
    """Hyper-parameters of the power-law fit."""

    exponent: float                       # signed, a = -alpha for decaying profiles
    k_max: int = 10
    n_max: int = 4
    g_tol: float = 1e-10
    r_cut: float = 50.0
    sample_count: int = 100
    polish: bool = False

    def __post_init__(self):
        if self.k_max < 1 or self.n_max < 1:
            raise ValueError("k_max and n_max must be positive")
        if self.g_tol <= 0:
            raise ValueError("g_tol must be positive")
        if self.r_cut <= 1:
            raise ValueError("r_cut must exceed one lattice spacing")


# ---------------------------------------------------------------------------
# stage 1: matrix-pencil exponential fit
# ---------------------------------------------------------------------------

def fit_exp_sum(samples: np.ndarray, n: int, polish: bool = False) -> ExpSum:
    """Fit ``f(r), r = 1..N`` by ``n`` complex exponentials.

    Bases are extracted from the generalized eigenvalues of a shifted pair
    of Hankel matrices built from the samples (matrix pencil); weights are
    then solved by linear least squares on the Vandermonde system.  Bases
    outside the closed unit disc are projected onto the unit circle and the
    weights re-solved, so transported legs can never grow with distance.
    """
    f = np.asarray(samples, dtype=complex)
    big_n = f.size
    if n < 1:
        raise ValueError("need at least one term")
    if big_n < 2 * n:
        raise ValueError(f"{big_n} samples cannot determine {n} exponentials (need >= {2 * n})")

    length = big_n // 2
    hank = np.empty((big_n - length, length + 1), dtype=complex)
    for i in range(big_n - length):
        hank[i, :] = f[i:i + length + 1]
    _, svals, vh = np.linalg.svd(hank)
    rank = int(np.sum(svals > max(hank.shape) * np.finfo(float).eps * max(svals[0], 1e-300)))
    flagged = False
    if rank < n:
        warnings.warn(f"Hankel matrix has numerical rank {rank} < {n}; returning fewer terms")
        n = max(rank, 1)
        flagged = True
    w0 = vh[:n, :length]
    w1 = vh[:n, 1:length + 1]
    lams = np.linalg.eigvals(np.linalg.pinv(w0.T) @ w1.T)
    lams = lams[np.argsort(-np.abs(lams), kind="stable")]
    outside = np.abs(lams) > 1
    if np.any(outside):
        flagged = True
        lams = np.where(outside, lams / np.abs(lams), lams)

    s = _solve_weights(f, lams)
    if polish:
        s, lams, polish_flag = _polish(f, s, lams)
        flagged = flagged or polish_flag
    return ExpSum(tuple(zip(s, lams)), flagged=flagged)


def _solve_weights(f: np.ndarray, lams: np.ndarray) -> np.ndarray:
    r = np.arange(1, f.size + 1)
    vand = lams[None, :] ** r[:, None]
    s, *_ = np.linalg.lstsq(vand, f, rcond=None)
    return s


def _polish(f, s, lams, max_iters=200, rel_stop=1e-12):
    """Joint Gauss-Newton refinement of (s, lambda); keeps |lambda| <= 1."""
    r = np.arange(1, f.size + 1, dtype=float)
    s = np.asarray(s, dtype=complex).copy()
    lams = np.asarray(lams, dtype=complex).copy()
    prev = None
    projected = False
    for _ in range(max_iters):
        vand = lams[None, :] ** r[:, None]
        resid = vand @ s - f
        res_norm = np.linalg.norm(resid)
        if prev is not None and abs(prev - res_norm) <= rel_stop * max(prev, 1e-300):
            break
        prev = res_norm
        d_lam = s[None, :] * r[:, None] * lams[None, :] ** (r[:, None] - 1)
        jac = np.hstack([vand, d_lam])
        step, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
        s = s + step[: s.size]
        lams = lams + step[s.size:]
        over = np.abs(lams) > 1
        if np.any(over):
            projected = True
            lams = np.where(over, lams / np.abs(lams), lams)
    return s, lams, projected


# ---------------------------------------------------------------------------
# stage 3: expand one Gaussian in exponentials
# ---------------------------------------------------------------------------

def gaussian_to_expsum(mu: complex, n_max: int, g_tol: float, big_n: int = 20) -> tuple[ExpSum, float]:
    """Expand ``exp(-mu r**2)`` on ``r = 1..big_n`` with at most n_max terms.

    Candidates with increasing term count are fitted in turn; the smallest
    count whose summed absolute error drops below ``g_tol`` wins, otherwise
    the candidate with the minimal error is kept (more terms do not always
    help here).  Returns the expansion and its error.
    """
    if n_max < 1:
        raise ValueError("n_max must be positive")
    r = np.arange(1, big_n + 1, dtype=float)
    exact = np.exp(-mu * r ** 2)
    best = None
    best_err = np.inf
    for n in range(1, n_max + 1):
        if big_n < 2 * n:
            break
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cand = fit_exp_sum(exact, n)
        err = float(np.sum(np.abs(cand(r) - exact)))
        if err < best_err:
            best, best_err = cand, err
        if err <= g_tol:
            return cand, err
    return best, best_err


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def _disc_points(r_cut: float) -> np.ndarray:
    lim = int(np.ceil(r_cut))
    pts = [
        (x, y)
        for x in range(-lim, lim + 1)
        for y in range(-lim, lim + 1)
        if 0 < x * x + y * y < r_cut * r_cut
    ]
    return np.array(pts, dtype=int)


def _leg_values(expsum: ExpSum, dists: np.ndarray) -> np.ndarray:
    """Per-leg factors with the exact value 1 at zero displacement."""
    vals = expsum(np.abs(dists).astype(float))
    return np.where(dists == 0, 1.0 + 0.0j, vals)


def fit_power_law(cfg: FitConfig) -> GaussianBasis:
    """Fit ``r**a`` on the integer disc by a separable-Gaussian basis.

    The pencil order of stage 1 is selected by running the full pipeline
    for every order up to ``k_max`` and keeping the fit with the smallest
    sup error on the disc, which makes the reported error non-increasing
    in ``k_max`` by construction.
    """
    pts = _disc_points(cfg.r_cut)
    radii = np.sqrt((pts ** 2).sum(axis=1).astype(float))
    target = radii ** cfg.exponent

    best: GaussianBasis | None = None
    for order in range(1, cfg.k_max + 1):
        cand = _fit_power_law_fixed_order(cfg, order, pts, target)
        if cand is None:
            continue
        if best is None or cand.sup_error < best.sup_error:
            best = cand
    if best is None:
        raise RuntimeError("power-law fit failed at every pencil order")
    return best


def _fit_power_law_fixed_order(cfg, order, pts, target):
    r1 = np.arange(1, cfg.sample_count + 1, dtype=float)
    stage1 = r1 ** (cfg.exponent / 2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            sqrt_fit = fit_exp_sum(stage1, order, polish=cfg.polish)
        except ValueError:
            return None
    lams = np.array([l for _, l in sqrt_fit.terms])
    mus = -np.log(np.where(lams == 0, 1e-300, lams))
    complex_mu = bool(np.any(np.abs(mus.imag) > 1e-14))

    expsums = []
    for mu in mus:
        es, _ = gaussian_to_expsum(mu, cfg.n_max, cfg.g_tol)
        expsums.append(es)

    # stage 4: re-solve the Gaussian weights on the disc
    cols = np.empty((pts.shape[0], len(expsums)), dtype=complex)
    for k, es in enumerate(expsums):
        cols[:, k] = _leg_values(es, pts[:, 0]) * _leg_values(es, pts[:, 1])
    weights, *_ = np.linalg.lstsq(cols, target.astype(complex), rcond=None)
    resid = cols @ weights - target
    sup_err = float(np.max(np.abs(resid)))
    l2_err = float(np.linalg.norm(resid) / np.sqrt(resid.size))
    return GaussianBasis(
        weights=tuple(weights),
        mus=tuple(mus),
        expsums=tuple(expsums),
        exponent=cfg.exponent,
        sup_error=sup_err,
        l2_error=l2_err,
        r_cut=cfg.r_cut,
        complex_mu=complex_mu,
    )


def eval_basis(b: GaussianBasis, x: int, y: int) -> complex:
    """Evaluate the fitted separable basis at integer displacement (x, y)."""
    if x == 0 and y == 0:
        raise ValueError("the basis is not defined at the origin")
    total = 0.0 + 0.0j
    for t_k, es in zip(b.weights, b.expsums):
        fx = 1.0 + 0.0j if x == 0 else complex(es(abs(x)))
        fy = 1.0 + 0.0j if y == 0 else complex(es(abs(y)))
        total += t_k * fx * fy
    return total


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_basis(b: GaussianBasis, path) -> None:
    doc = {
        "format": "openpepo-gaussian-basis",
        "version": 1,
        "exponent": b.exponent,
        "r_cut": b.r_cut,
        "sup_error": b.sup_error,
        "l2_error": b.l2_error,
        "complex_mu": b.complex_mu,
        "components": [
            {
                "t_re": t.real, "t_im": t.imag,
                "mu_re": m.real, "mu_im": m.imag,
                "terms": [
                    {"s_re": s.real, "s_im": s.imag, "lam_re": l.real, "lam_im": l.imag}
                    for s, l in es.terms
                ],
            }
            for t, m, es in zip(b.weights, b.mus, b.expsums)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_basis(path) -> GaussianBasis:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "openpepo-gaussian-basis":
        raise ValueError("not a gaussian-basis file")
    weights, mus, expsums = [], [], []
    for comp in doc["components"]:
        weights.append(complex(comp["t_re"], comp["t_im"]))
        mus.append(complex(comp["mu_re"], comp["mu_im"]))
        expsums.append(ExpSum(tuple(
            (complex(t["s_re"], t["s_im"]), complex(t["lam_re"], t["lam_im"]))
            for t in comp["terms"]
        )))
    return GaussianBasis(
        weights=tuple(weights), mus=tuple(mus), expsums=tuple(expsums),
        exponent=doc["exponent"], sup_error=doc["sup_error"],
        l2_error=doc["l2_error"], r_cut=doc["r_cut"],
        complex_mu=doc["complex_mu"],
    )
