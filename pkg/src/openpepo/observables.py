"""Boundary-MPS environments and reduced density matrices.

The per-site trace of the infinite network and all row-aligned reduced
density matrices are extracted from uniform boundary MPS approximations of
the half-infinite planes above and below a row, together with the left and
right fixed points of the mixed column transfer matrix.

Two boundary solvers share all conventions: a power-iteration path
(absorb a row, recompress the uniform MPS to bond dimension chi) and a
variational fixed-point path in mixed canonical form.  Both are
deterministic: every inner eigenproblem starts from a fixed vector and all
eigenvectors are phase-fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg

__all__ = [
    "trace_tensor",
    "BoundaryEnv",
    "boundary_env",
    "rdm",
    "expectations",
    "EnvTracker",
    "bond_environment_defect",
]


def _vec_identity(d2: int) -> np.ndarray:
    d = int(round(np.sqrt(d2)))
    return np.eye(d, dtype=complex).flatten(order="F")


def trace_tensor(s) -> np.ndarray:
    """Close the physical axis with the vectorized identity and absorb
    sqrt bond weights symmetrically into all four legs."""
    a = np.tensordot(_vec_identity(s.phys_dim), s.a, axes=([0], [0]))
    sh = np.sqrt(s.lam_h / s.lam_h.sum())
    sv = np.sqrt(s.lam_v / s.lam_v.sum())
    return a * sh[:, None, None, None] * sv[None, :, None, None] \
             * sh[None, None, :, None] * sv[None, None, None, :]


def dressed_site_tensor(s) -> np.ndarray:
    """Site tensor with sqrt bond weights absorbed, physical axis kept open."""
    sh = np.sqrt(s.lam_h / s.lam_h.sum())
    sv = np.sqrt(s.lam_v / s.lam_v.sum())
    return s.a * sh[None, :, None, None, None] * sv[None, None, :, None, None] \
               * sh[None, None, None, :, None] * sv[None, None, None, None, :]


def _flip_vertical(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(0, 3, 2, 1))


def _phase_fix(v: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(v))
    piv = v.flat[idx]
    if piv == 0:
        return v
    return v * (np.abs(piv) / piv)


def _dominant_eig(matvec, dim: int, v0: np.ndarray, tol: float = 0.0):
    """Largest-magnitude eigenpair, deterministic (fixed start vector)."""
    if dim <= 64:
        mat = np.empty((dim, dim), dtype=complex)
        basis = np.eye(dim, dtype=complex)
        for j in range(dim):
            mat[:, j] = matvec(basis[:, j])
        evals, evecs = np.linalg.eig(mat)
        order = np.argsort(-np.abs(evals), kind="stable")
        lam, vec = evals[order[0]], evecs[:, order[0]]
    else:
        op = scipy.sparse.linalg.LinearOperator((dim, dim), matvec=matvec, dtype=complex)
        evals, evecs = scipy.sparse.linalg.eigs(op, k=1, which="LM",
                                                v0=v0, tol=tol, maxiter=5000)
        lam, vec = evals[0], evecs[:, 0]
    vec = _phase_fix(vec)
    return complex(lam), vec / np.linalg.norm(vec)


# ---------------------------------------------------------------------------
# uniform MPS utilities
# ---------------------------------------------------------------------------

def _mps_transfer_fp(m: np.ndarray, side: str, tol: float = 1e-14,
                     max_iter: int = 2000):
    """Dominant fixed point of the norm transfer map of a uniform MPS.

    The map is completely positive, so from the identity seed the iterates
    stay Hermitian positive semidefinite.  Returns (matrix, eigenvalue).
    """
    chi = m.shape[0]
    x = np.eye(chi, dtype=complex) / chi
    lam = 1.0
    for _ in range(max_iter):
        if side == "left":
            y = np.einsum("ab,apr,bps->rs", x, m, m.conj(), optimize=True)
        else:
            y = np.einsum("rs,apr,bps->ab", x, m, m.conj(), optimize=True)
        y = 0.5 * (y + y.conj().T)
        lam_new = np.linalg.norm(y)
        y = y / lam_new
        if np.linalg.norm(y - x) < tol:
            x = y
            lam = lam_new
            break
        x, lam = y, lam_new
    return x, float(np.real(lam))


def _psd_split(x: np.ndarray):
    """x = F^+ F with F = sqrt(w) U^+; tiny negative weights are clipped."""
    w, u = np.linalg.eigh(0.5 * (x + x.conj().T))
    w = np.clip(w, 0.0, None)
    return np.sqrt(w)[:, None] * u.conj().T, w, u


def _absorb_row(m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Contract a lattice row into a top boundary MPS (physical leg = n)."""
    big = np.einsum("lnr,eswn->lwsre", m, a, optimize=True)
    chi, d_h = m.shape[0], a.shape[0]
    return big.reshape(chi * d_h, a.shape[1], m.shape[2] * d_h)


def _truncate_uniform(m: np.ndarray, chi: int):
    """Recompress a uniform MPS to bond dimension chi (2-norm optimal
    through the dominant transfer fixed points)."""
    l_fp, _ = _mps_transfer_fp(m, "left")
    r_fp, _ = _mps_transfer_fp(m, "right")
    x_mat, _, _ = _psd_split(l_fp)             # l = X^+ X
    f_mat, _, _ = _psd_split(r_fp)             # r = Y Y^+  with  Y = F^+
    y_mat = f_mat.conj().T
    center = x_mat @ y_mat
    u, s, vh = np.linalg.svd(center)
    rank = int(np.sum(s > max(center.shape) * np.finfo(float).eps * max(s[0], 1e-300)))
    keep = max(1, min(chi, rank))
    s_k = s[:keep]
    inv_sqrt = 1.0 / np.sqrt(s_k)
    proj_in = (y_mat @ vh[:keep].conj().T) * inv_sqrt[None, :]     # (chi_old, keep)
    proj_out = (inv_sqrt[:, None] * u[:, :keep].conj().T) @ x_mat  # (keep, chi_old)
    m_new = np.einsum("al,lpr,rb->apb", proj_out, m, proj_in, optimize=True)
    m_new = m_new / np.linalg.norm(m_new)
    return np.ascontiguousarray(m_new), s_k / np.linalg.norm(s_k)


def _canonical_forms(m: np.ndarray):
    """Left/right canonical tensors of a uniform MPS."""
    l_fp, eta_l = _mps_transfer_fp(m, "left")
    r_fp, eta_r = _mps_transfer_fp(m, "right")
    x_mat, w_l, u_l = _psd_split(l_fp)
    floor_l = max(w_l.max(), 1e-300) * 1e-14
    x_inv = u_l @ np.diag(1.0 / np.sqrt(np.maximum(w_l, floor_l)))
    f_mat, w_r, u_r = _psd_split(r_fp)
    y_mat = f_mat.conj().T
    floor_r = max(w_r.max(), 1e-300) * 1e-14
    y_inv = np.diag(1.0 / np.sqrt(np.maximum(w_r, floor_r))) @ u_r.conj().T
    al = np.einsum("al,lpr,rb->apb", x_mat, m, x_inv, optimize=True) / np.sqrt(eta_l)
    ar = np.einsum("al,lpr,rb->apb", y_inv, m, y_mat, optimize=True) / np.sqrt(eta_r)
    return al, ar


def _power_boundary(a: np.ndarray, chi: int, tol: float, m0=None,
                    max_sweeps: int = 200):
    """Dominant boundary MPS by repeated row absorption and recompression."""
    d_v = a.shape[3]
    if m0 is None or m0.shape[1] != d_v:
        m = np.ones((1, d_v, 1), dtype=complex)
        m /= np.linalg.norm(m)
    else:
        m = m0
    spec_prev = None
    for _ in range(max_sweeps):
        m, spec = _truncate_uniform(_absorb_row(m, a), chi)
        if spec_prev is not None:
            n = max(spec.size, spec_prev.size)
            pa = np.zeros(n)
            pa[: spec.size] = spec
            pb = np.zeros(n)
            pb[: spec_prev.size] = spec_prev
            if np.linalg.norm(pa - pb) < tol:
                spec_prev = spec
                break
        spec_prev = spec
    return m


# ---------------------------------------------------------------------------
# variational fixed-point boundary (mixed canonical form)
# ---------------------------------------------------------------------------

def _polar_u(x: np.ndarray) -> np.ndarray:
    u, _, vh = np.linalg.svd(x, full_matrices=False)
    return u @ vh


def _vumps_boundary(a: np.ndarray, chi: int, tol: float = 1e-10,
                    max_iter: int = 500, m0=None):
    """Variational uniform-MPS fixed point of the row transfer operator.

    Works in mixed canonical form (AL, AR, C, AC); the environment fixed
    points are recomputed each sweep, the local eigenproblems are solved
    for AC and C, and AL/AR follow from polar decompositions.  Returns
    ``(al, ar, residual)``.
    """
    seed = _power_boundary(a, chi, tol=max(tol, 1e-8), m0=m0, max_sweeps=30)
    al, ar = _canonical_forms(seed)
    chi_b = al.shape[0]
    d_v = a.shape[3]
    c = np.eye(chi_b, dtype=complex) / np.sqrt(chi_b)
    ac = np.einsum("lpr,rb->lpb", al, c, optimize=True)
    residual = np.inf
    for _ in range(max_iter):
        fl = _channel_fp_single(al, a, "left")
        fr = _channel_fp_single(ar, a, "right")

        def mv_ac(v):
            x = v.reshape(chi_b, d_v, chi_b)
            y = np.einsum("lwp,pnq,eswn,qer->lsr", fl, x, a, fr, optimize=True)
            return y.ravel()

        def mv_c(v):
            x = v.reshape(chi_b, chi_b)
            y = np.einsum("lwp,pq,qwr->lr", fl, x, fr, optimize=True)
            return y.ravel()

        _, ac_vec = _dominant_eig(mv_ac, chi_b * d_v * chi_b, ac.ravel())
        _, c_vec = _dominant_eig(mv_c, chi_b * chi_b, c.ravel())
        ac = ac_vec.reshape(chi_b, d_v, chi_b)
        c = c_vec.reshape(chi_b, chi_b)
        al = (_polar_u(ac.reshape(chi_b * d_v, chi_b))
              @ _polar_u(c).conj().T).reshape(chi_b, d_v, chi_b)
        ar_mat = _polar_u(c).conj().T @ _polar_u(ac.reshape(chi_b, d_v * chi_b))
        ar = ar_mat.reshape(chi_b, d_v, chi_b)
        residual = np.linalg.norm(ac - np.einsum("lpr,rb->lpb", al, c, optimize=True))
        if residual < tol:
            break
    return al, ar, float(residual)


def _channel_fp_single(m: np.ndarray, a: np.ndarray, side: str):
    """Fixed point of the single-boundary channel [m; a; conj(m)]."""
    chi = m.shape[0]
    d_h = a.shape[0]
    dim = chi * d_h * chi

    if side == "left":
        def mv(v):
            x = v.reshape(chi, d_h, chi)
            y = np.einsum("lwk,lnr,eswn,ksq->req", x, m, a, m.conj(), optimize=True)
            return y.ravel()
    else:
        def mv(v):
            x = v.reshape(chi, d_h, chi)
            y = np.einsum("req,lnr,eswn,ksq->lwk", x, m, a, m.conj(), optimize=True)
            return y.ravel()

    v0 = np.einsum("ab,w->awb", np.eye(chi, dtype=complex),
                   np.ones(d_h, dtype=complex)).ravel()
    _, vec = _dominant_eig(mv, dim, v0)
    return vec.reshape(chi, d_h, chi)


# ---------------------------------------------------------------------------
# environment assembly
# ---------------------------------------------------------------------------

@dataclass
class BoundaryEnv:
    """Boundary MPS pair plus mixed-channel fixed points for one state."""

    top_al: np.ndarray
    top_ar: np.ndarray
    bot_al: np.ndarray
    bot_ar: np.ndarray
    l_fp: np.ndarray          # left fp of the [top_al, a, bot_al] channel
    r_fp: np.ndarray          # right fp of the same channel
    lam3: complex             # its eigenvalue
    l2_fp: np.ndarray         # left fp of the boundary overlap channel
    r2_fp: np.ndarray
    lam2: complex
    chi: int
    method: str
    residuals: dict

    @property
    def site_value(self) -> complex:
        """Per-site trace of the infinite network."""
        return self.lam3 / self.lam2


def _mixed_channel_fps(top: np.ndarray, a: np.ndarray, bot: np.ndarray):
    """Dominant left/right fixed points of the 3-layer column transfer."""
    chi_t, chi_b = top.shape[0], bot.shape[0]
    d_h = a.shape[0]
    dim = chi_t * d_h * chi_b

    def mv_l(v):
        x = v.reshape(chi_t, d_h, chi_b)
        y = np.einsum("lwm,lnr,eswn,msq->req", x, top, a, bot, optimize=True)
        return y.ravel()

    def mv_r(v):
        x = v.reshape(chi_t, d_h, chi_b)
        y = np.einsum("req,lnr,eswn,msq->lwm", x, top, a, bot, optimize=True)
        return y.ravel()

    v0 = np.ones(dim, dtype=complex) / np.sqrt(dim)
    lam_l, l_vec = _dominant_eig(mv_l, dim, v0)
    lam_r, r_vec = _dominant_eig(mv_r, dim, v0)
    res_l = np.linalg.norm(mv_l(l_vec) - lam_l * l_vec)
    res_r = np.linalg.norm(mv_r(r_vec) - lam_r * r_vec)
    return (l_vec.reshape(chi_t, d_h, chi_b), r_vec.reshape(chi_t, d_h, chi_b),
            lam_l, {"L": float(res_l), "R": float(res_r), "lam_r": lam_r})


def _overlap_channel_fps(top: np.ndarray, bot: np.ndarray):
    chi_t, chi_b = top.shape[0], bot.shape[0]
    dim = chi_t * chi_b

    def mv_l(v):
        x = v.reshape(chi_t, chi_b)
        y = np.einsum("lm,lpr,mpq->rq", x, top, bot, optimize=True)
        return y.ravel()

    def mv_r(v):
        x = v.reshape(chi_t, chi_b)
        y = np.einsum("rq,lpr,mpq->lm", x, top, bot, optimize=True)
        return y.ravel()

    v0 = np.ones(dim, dtype=complex) / np.sqrt(dim)
    lam_l, l_vec = _dominant_eig(mv_l, dim, v0)
    _, r_vec = _dominant_eig(mv_r, dim, v0)
    return l_vec.reshape(chi_t, chi_b), r_vec.reshape(chi_t, chi_b), lam_l


def boundary_env(a: np.ndarray, chi: int, tol: float = 1e-11,
                 method: str = "power", seeds=(None, None)) -> BoundaryEnv:
    """Boundary environment of the trace network built from tensor ``a``.

    ``method="power"`` uses repeated row absorption with recompression;
    ``method="vumps"`` refines the boundary variationally in mixed
    canonical form.  The two agree on the per-site value of converged
    networks and serve as mutual cross-checks.
    """
    if chi < 1:
        raise ValueError("chi must be at least 1")
    a_flip = _flip_vertical(a)
    if method == "power":
        top_m = _power_boundary(a, chi, tol, m0=seeds[0])
        bot_m = _power_boundary(a_flip, chi, tol, m0=seeds[1])
        top_al, top_ar = _canonical_forms(top_m)
        bot_al, bot_ar = _canonical_forms(bot_m)
        residuals = {}
    elif method == "vumps":
        top_al, top_ar, res_t = _vumps_boundary(a, chi, tol=max(tol, 1e-10), m0=seeds[0])
        bot_al, bot_ar, res_b = _vumps_boundary(a_flip, chi, tol=max(tol, 1e-10), m0=seeds[1])
        residuals = {"vumps_top": res_t, "vumps_bot": res_b}
    else:
        raise ValueError(f"unknown boundary method {method!r}")

    l_fp, r_fp, lam3, res3 = _mixed_channel_fps(top_al, a, bot_al)
    l2_fp, r2_fp, lam2 = _overlap_channel_fps(top_al, bot_al)
    residuals.update(res3)
    return BoundaryEnv(
        top_al=top_al, top_ar=top_ar, bot_al=bot_al, bot_ar=bot_ar,
        l_fp=l_fp, r_fp=r_fp, lam3=lam3, l2_fp=l2_fp, r2_fp=r2_fp, lam2=lam2,
        chi=chi, method=method, residuals=residuals,
    )


class EnvTracker:
    """Warm-started boundary environments along a trajectory."""

    def __init__(self, chi: int, tol: float = 1e-11, method: str = "power"):
        self.chi = chi
        self.tol = tol
        self.method = method
        self._top_m = None
        self._bot_m = None

    def environment(self, state) -> BoundaryEnv:
        a = trace_tensor(state)
        env = boundary_env(a, self.chi, self.tol, method=self.method,
                           seeds=(self._top_m, self._bot_m))
        if self.method == "power":
            # seeds for the next refresh: reuse the canonical tensors
            self._top_m = env.top_al
            self._bot_m = env.bot_al
        return env

    def seeds(self):
        top = self._top_m if self._top_m is not None else np.zeros((0,), dtype=complex)
        bot = self._bot_m if self._bot_m is not None else np.zeros((0,), dtype=complex)
        return top, bot

    def load_seeds(self, top, bot):
        self._top_m = top if getattr(top, "size", 0) else None
        self._bot_m = bot if getattr(bot, "size", 0) else None


# ---------------------------------------------------------------------------
# reduced density matrices and expectation values
# ---------------------------------------------------------------------------

def rdm(s, env: BoundaryEnv, offsets) -> np.ndarray:
    """Reduced density matrix on row-aligned sites at the given column offsets.

    Intermediate columns are filled with trace tensors; the result is
    normalized to unit trace and Hermitian-symmetrized.
    """
    offsets = sorted(int(o) for o in offsets)
    if len(set(offsets)) != len(offsets):
        raise ValueError("offsets must be distinct")
    base = offsets[0]
    offsets = [o - base for o in offsets]
    span = offsets[-1] + 1
    a_tr = trace_tensor(s)
    a_open = dressed_site_tensor(s)
    d2 = s.phys_dim
    d = int(round(np.sqrt(d2)))

    def window(open_cols: set) -> np.ndarray:
        val = env.l_fp  # (l, h, m)
        n_phys = 0
        for col in range(span):
            if col in open_cols:
                val = np.einsum("...lhm,lnr,peshn,msq->...preq",
                                val, env.top_al, a_open, env.bot_al, optimize=True)
                n_phys += 1
            else:
                val = np.einsum("...lhm,lnr,eshn,msq->...req",
                                val, env.top_al, a_tr, env.bot_al, optimize=True)
        out = np.einsum("...req,req->...", val, env.r_fp, optimize=True)
        return out

    raw = window(set(offsets))
    norm = window(set())
    rho_vec = raw / norm
    n_ops = len(offsets)
    # each fused physical index is (bra, ket) column-stacked: p = j*d + i
    rho = rho_vec.reshape((d, d) * n_ops)
    bra_axes = [2 * k for k in range(n_ops)]
    ket_axes = [2 * k + 1 for k in range(n_ops)]
    rho = rho.transpose(ket_axes + bra_axes).reshape(d ** n_ops, d ** n_ops)
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def expectations(rho: np.ndarray, ops: dict) -> dict:
    """Named expectation values ``tr(rho O)`` (complex, imag kept for
    diagnostics)."""
    out = {}
    for name, op in ops.items():
        op = np.asarray(op, dtype=complex)
        if op.shape != rho.shape:
            raise ValueError(f"operator {name!r} does not match the density matrix")
        out[name] = complex(np.trace(rho @ op))
    return out


def bond_environment_defect(s) -> float:
    """Max deviation from the identity of the single-bond weight environment.

    Contracts the site tensor with its conjugate and squared bond weights
    on three legs (east leg left open); in a perfect Vidal gauge the result
    is proportional to the identity on the open bond.
    """
    lh = s.lam_h / s.lam_h.sum()
    lv = s.lam_v / s.lam_v.sum()
    t = s.a * (lv ** 2)[None, None, :, None, None] \
            * (lh ** 2)[None, None, None, :, None] \
            * (lv ** 2)[None, None, None, None, :]
    m = np.tensordot(t, s.a.conj(), axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    scale = np.trace(m) / m.shape[0]
    return float(np.max(np.abs(m / scale - np.eye(m.shape[0]))))
