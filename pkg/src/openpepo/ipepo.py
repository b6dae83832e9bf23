"""Infinite-PEPO ansatz, operator application, and iterative simple update.

The state is a single-site unit cell in the Vidal gauge: one rank-5 tensor
``A[p, e, s, w, n]`` (physical axis = fused bra/ket space) plus diagonal
bond weights ``lam_h``/``lam_v`` shared by all horizontal/vertical bonds.

Applying a PEPO multiplies every bond dimension by the operator bond
dimension.  The iterative simple update (itrSU) truncates the enlarged
bonds back: per iteration and per bond, all other legs are truncated with
the bond maps of the previous iteration (environment approximation), the
remaining bond is split by QR, the weighted bond matrix is SVD-truncated,
and new bond maps are rebuilt through pseudo-inverses.  Iteration stops
when the bond spectra stop moving.

Bond-map bookkeeping: a bond replacement ``Lambda ~ u @ diag(lam) @ v^T``
uses raw maps ``u = sqrt(Lambda) M_A^+ U`` and
``v = (V^+ M_B^+ sqrt(Lambda))^T`` that are only approximately isometric
(exactly so at a perfect Vidal-gauge fixed point).  The cache keeps these
raw maps; their orthonormal polar factors are exposed for gauge
diagnostics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from openpepo.fsa import Pepo, RuleTable, assemble_pepo, make_wii
from openpepo.tensorops import pseudo_inverse, truncated_svd

__all__ = [
    "IpepoState",
    "IsometryCache",
    "TruncationConfig",
    "Trajectory",
    "product_state",
    "apply_tepepo",
    "itrsu",
    "evolve",
    "bond_entropy",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class IpepoState:
    """Vidal-gauge iPEPO: site tensor ``A[p, e, s, w, n]`` plus bond weights."""

    a: np.ndarray
    lam_h: np.ndarray
    lam_v: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=complex)
        if a.ndim != 5:
            raise ValueError("site tensor must have axes (p, e, s, w, n)")
        if a.shape[1] != a.shape[3] or a.shape[2] != a.shape[4]:
            raise ValueError("opposite virtual legs must match")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "lam_h", np.asarray(self.lam_h, dtype=float))
        object.__setattr__(self, "lam_v", np.asarray(self.lam_v, dtype=float))
        if self.lam_h.size != a.shape[1] or self.lam_v.size != a.shape[2]:
            raise ValueError("bond weights must match the virtual leg sizes")

    @property
    def phys_dim(self) -> int:
        return self.a.shape[0]

    @property
    def bond_h(self) -> int:
        return self.a.shape[1]

    @property
    def bond_v(self) -> int:
        return self.a.shape[2]


@dataclass
class IsometryCache:
    """Raw bond-truncation maps of shape (D*eta, D) per lattice direction.

    ``u_*`` truncates the east/south leg of a site (the head side of each
    bond), ``v_*`` the west/north leg of its neighbor.
    """

    u_h: np.ndarray | None = None
    v_h: np.ndarray | None = None
    u_v: np.ndarray | None = None
    v_v: np.ndarray | None = None

    def matches(self, e_h: int, e_v: int) -> bool:
        return all(
            m is not None and m.shape[0] == dim
            for m, dim in ((self.u_h, e_h), (self.v_h, e_h),
                           (self.u_v, e_v), (self.v_v, e_v))
        )

    @staticmethod
    def _polar_isometry(m: np.ndarray) -> np.ndarray:
        u, _, vh = np.linalg.svd(m, full_matrices=False)
        return u @ vh

    @property
    def isometries(self) -> dict:
        """Orthonormal polar factors of the raw maps (U^+ U = 1 exactly)."""
        return {
            name: None if m is None else self._polar_isometry(m)
            for name, m in (("U_h", self.u_h), ("V_h", self.v_h),
                            ("U_v", self.u_v), ("V_v", self.v_v))
        }


@dataclass(frozen=True)
class TruncationConfig:
    d_max: int
    eps_su: float = 1e-8
    max_iters: int = 20
    mode: str = "parallel"
    pinv_tol: float = 1e-12

    def __post_init__(self):
        if self.eps_su <= 0:
            raise ValueError("eps_su must be positive")
        if self.mode not in ("parallel", "sequential"):
            raise ValueError("mode must be 'parallel' or 'sequential'")


def product_state(rho_local: np.ndarray) -> IpepoState:
    """D = 1 state from a single-site density matrix."""
    rho = np.asarray(rho_local, dtype=complex)
    if not np.allclose(rho, rho.conj().T):
        raise ValueError("initial density matrix must be Hermitian")
    tr = np.trace(rho)
    if abs(tr) < 1e-12:
        raise ValueError("initial density matrix must have nonzero trace")
    evals = np.linalg.eigvalsh(rho / tr)
    if np.min(evals) < -1e-10:
        raise ValueError("initial density matrix must be positive semidefinite")
    v = (rho / tr).flatten(order="F")
    return IpepoState(v.reshape(-1, 1, 1, 1, 1), np.ones(1), np.ones(1))


def apply_tepepo(s: IpepoState, p: Pepo) -> IpepoState:
    """Contract the operator onto the site tensor, enlarging every bond.

    Composite legs are fused state-major, ``leg = state_index * eta + op_index``,
    and the enlarged bond weights are the state weights padded flat across
    the operator index.
    """
    if p.d_op != s.phys_dim:
        raise ValueError(
            f"operator physical dimension {p.d_op} != state physical dimension {s.phys_dim}")
    a, w = s.a, p.tensor
    # (p,e1,s1,w1,n1) x (e2,s2,w2,n2,out,in) over p=in
    t = np.tensordot(a, w, axes=([0], [5]))
    # axes now (e1,s1,w1,n1,e2,s2,w2,n2,out) -> (out, e1,e2, s1,s2, w1,w2, n1,n2)
    t = t.transpose(8, 0, 4, 1, 5, 2, 6, 3, 7)
    d2 = s.phys_dim
    e_h = s.bond_h * p.eta_h
    e_v = s.bond_v * p.eta_v
    t = np.ascontiguousarray(t).reshape(d2, e_h, e_v, e_h, e_v)
    lam_h = np.kron(s.lam_h, np.ones(p.eta_h))
    lam_v = np.kron(s.lam_v, np.ones(p.eta_v))
    return IpepoState(t, lam_h / lam_h.sum(), lam_v / lam_v.sum())


def bond_entropy(s: IpepoState, direction: str) -> float:
    """Shannon entropy of a bond-weight vector, with 0 log 0 := 0."""
    lam = s.lam_h if direction == "h" else s.lam_v
    lam = lam / lam.sum()
    pos = lam[lam > 0]
    return float(-np.sum(pos * np.log(pos)))


# ---------------------------------------------------------------------------
# iterative simple update
# ---------------------------------------------------------------------------

def _leg_contract(t: np.ndarray, axis: int, mat: np.ndarray) -> np.ndarray:
    out = np.tensordot(t, mat, axes=([axis], [0]))
    return np.moveaxis(out, -1, axis)


def _r_factor(matrix: np.ndarray) -> np.ndarray:
    r = scipy.linalg.qr(matrix, mode="r")[0]
    k = min(matrix.shape)
    return r[:k, :]


def _matricize_active(t: np.ndarray, active_axis: int) -> np.ndarray:
    """(rest x active) matricization preserving the remaining axis order."""
    rest = [i for i in range(t.ndim) if i != active_axis]
    perm = rest + [active_axis]
    nrow = int(np.prod([t.shape[i] for i in rest]))
    return t.transpose(perm).reshape(nrow, t.shape[active_axis])


@dataclass
class _BondResult:
    u_map: np.ndarray
    v_map: np.ndarray
    lam: np.ndarray
    pinv_flag: bool


def _update_bond(p_a: np.ndarray, p_b: np.ndarray, active_a: int, active_b: int,
                 sqrt_big_lam: np.ndarray, cfg: TruncationConfig) -> _BondResult:
    """One simple-update bond truncation.

    ``p_a``/``p_b`` carry raw active legs; both absorb half of the enlarged
    bond weight before the QR split, then ``M_A M_B`` is SVD-truncated and
    the raw bond maps rebuilt through pseudo-inverses.
    """
    shape_a = [1] * p_a.ndim
    shape_a[active_a] = -1
    shape_b = [1] * p_b.ndim
    shape_b[active_b] = -1
    z_a = _matricize_active(p_a * sqrt_big_lam.reshape(shape_a), active_a)
    z_b = _matricize_active(p_b * sqrt_big_lam.reshape(shape_b), active_b)
    m_a = _r_factor(z_a)            # (k, E)
    m_b = _r_factor(z_b).T          # (E, k')
    u, lam, vh, _ = truncated_svd(m_a @ m_b, max_rank=cfg.d_max)
    pinv_flag = False
    for m in (m_a, m_b):
        sv = np.linalg.svd(m, compute_uv=False)
        if sv[-1] < cfg.pinv_tol * sv[0]:
            pinv_flag = True
    m_a_pinv = pseudo_inverse(m_a, rel_tol=cfg.pinv_tol)
    m_b_pinv = pseudo_inverse(m_b, rel_tol=cfg.pinv_tol)
    u_map = sqrt_big_lam[:, None] * (m_a_pinv @ u)
    v_map = ((vh @ m_b_pinv) * sqrt_big_lam[None, :]).T
    return _BondResult(u_map=u_map, v_map=v_map, lam=lam / lam.sum(),
                       pinv_flag=pinv_flag)


def _spectrum_distance(new: np.ndarray, old: np.ndarray) -> float:
    n = max(new.size, old.size)
    a = np.zeros(n)
    a[: new.size] = new
    b = np.zeros(n)
    b[: old.size] = old
    return float(np.linalg.norm(a - b))


class _WorkSpace:
    """Per-application scratch holding the enlarged tensor in two layouts."""

    def __init__(self, t: np.ndarray):
        self.t = t                                     # (p, e, s, w, n)
        self.t_alt = np.ascontiguousarray(t.transpose(0, 1, 3, 4, 2))  # (p,e,w,n,s)

    def build_p_tensors(self, maps: dict, lam_h: np.ndarray, lam_v: np.ndarray,
                        which=("h", "v")) -> dict:
        de = maps["u_h"] * np.sqrt(lam_h)[None, :]
        dw = maps["v_h"] * np.sqrt(lam_h)[None, :]
        ds = maps["u_v"] * np.sqrt(lam_v)[None, :]
        dn = maps["v_v"] * np.sqrt(lam_v)[None, :]
        out = {}
        y2 = np.tensordot(self.t, dn, axes=([4], [0]))     # (p,e,s,w,Dn)
        if "h" in which:
            y = _leg_contract(y2, 2, ds)                   # (p,e,Ds,w,Dn)
            out["p_a_h"] = (_leg_contract(y, 3, dw), 1)    # active e
            out["p_b_h"] = (_leg_contract(y, 1, de), 3)    # active w
        if "v" in which:
            out["p_a_v"] = (_leg_contract(_leg_contract(y2, 1, de), 3, dw), 2)
            y2p = np.tensordot(self.t_alt, ds, axes=([4], [0]))  # (p,e,w,n,Ds)
            out["p_b_v"] = (_leg_contract(_leg_contract(y2p, 1, de), 2, dw), 3)
        return out


def _cold_p_tensors(t: np.ndarray, sqrt_lh: np.ndarray, sqrt_lv: np.ndarray) -> dict:
    """First-iteration tensors: every environment leg dressed with the raw
    enlarged half-weights at full dimension (one standard simple update)."""
    dressed = t * sqrt_lh[None, :, None, None, None]
    dressed = dressed * sqrt_lv[None, None, :, None, None]
    dressed = dressed * sqrt_lh[None, None, None, :, None]
    dressed = dressed * sqrt_lv[None, None, None, None, :]
    # the active leg of each P must stay raw; divide its dressing back out
    inv_h = np.reciprocal(sqrt_lh, where=sqrt_lh > 0, out=np.zeros_like(sqrt_lh))
    inv_v = np.reciprocal(sqrt_lv, where=sqrt_lv > 0, out=np.zeros_like(sqrt_lv))
    return {
        "p_a_h": (dressed * inv_h[None, :, None, None, None], 1),
        "p_b_h": (dressed * inv_h[None, None, None, :, None], 3),
        "p_a_v": (dressed * inv_v[None, None, :, None, None], 2),
        "p_b_v": (dressed * inv_v[None, None, None, None, :], 4),
    }


def itrsu(s: IpepoState, cache: IsometryCache | None,
          cfg: TruncationConfig) -> tuple[IpepoState, IsometryCache, float, dict]:
    """Truncate an enlarged state back to the target bond dimension.

    Returns ``(truncated_state, refreshed_cache, last_delta, info)`` where
    ``info`` records the iteration count, convergence, and pseudo-inverse
    conditioning flags.  With no usable cache the first iteration runs a
    full-dimension simple update on every bond, seeding the maps.
    """
    t = s.a
    e_h, e_v = s.bond_h, s.bond_v
    big_lh = s.lam_h / s.lam_h.sum()
    big_lv = s.lam_v / s.lam_v.sum()
    sqrt_lh = np.sqrt(big_lh)
    sqrt_lv = np.sqrt(big_lv)
    d_h = min(cfg.d_max, e_h)
    d_v = min(cfg.d_max, e_v)

    lam_h = big_lh[:d_h] / big_lh[:d_h].sum()
    lam_v = big_lv[:d_v] / big_lv[:d_v].sum()

    warm = cache is not None and cache.matches(e_h, e_v)
    maps = {"u_h": cache.u_h, "v_h": cache.v_h, "u_v": cache.u_v, "v_v": cache.v_v} \
        if warm else None
    ws = _WorkSpace(t)

    delta = np.inf
    pinv_flag = False
    n_iter = 0
    converged = False
    while n_iter < cfg.max_iters:
        n_iter += 1
        if maps is None:
            ps = _cold_p_tensors(t, sqrt_lh, sqrt_lv)
        elif cfg.mode == "parallel":
            ps = ws.build_p_tensors(maps, lam_h, lam_v)
        else:
            ps = ws.build_p_tensors(maps, lam_h, lam_v, which=("h",))

        res_h = _update_bond(ps["p_a_h"][0], ps["p_b_h"][0],
                             ps["p_a_h"][1], ps["p_b_h"][1], sqrt_lh, cfg)
        if maps is not None and cfg.mode == "sequential":
            maps = dict(maps, u_h=res_h.u_map, v_h=res_h.v_map)
            lam_h_seq = res_h.lam
            ps_v = ws.build_p_tensors(maps, lam_h_seq, lam_v, which=("v",))
            ps.update(ps_v)
        res_v = _update_bond(ps["p_a_v"][0], ps["p_b_v"][0],
                             ps["p_a_v"][1], ps["p_b_v"][1], sqrt_lv, cfg)

        delta = max(_spectrum_distance(res_h.lam, lam_h),
                    _spectrum_distance(res_v.lam, lam_v))
        lam_h, lam_v = res_h.lam, res_v.lam
        maps = {"u_h": res_h.u_map, "v_h": res_h.v_map,
                "u_v": res_v.u_map, "v_v": res_v.v_map}
        pinv_flag = pinv_flag or res_h.pinv_flag or res_v.pinv_flag
        if delta < cfg.eps_su:
            converged = True
            break

    a_new = np.tensordot(t, maps["v_v"], axes=([4], [0]))      # n
    a_new = _leg_contract(a_new, 2, maps["u_v"])               # s
    a_new = _leg_contract(a_new, 3, maps["v_h"])               # w
    a_new = _leg_contract(a_new, 1, maps["u_h"])               # e
    new_state = IpepoState(a_new, lam_h, lam_v)
    new_cache = IsometryCache(u_h=maps["u_h"], v_h=maps["v_h"],
                              u_v=maps["u_v"], v_v=maps["v_v"])
    info = {"iterations": n_iter, "converged": converged, "pinv_flagged": pinv_flag}
    if not converged:
        warnings.warn(f"itrsu stopped at delta={delta:.3e} after {n_iter} iterations")
    return new_state, new_cache, float(delta), info


# ---------------------------------------------------------------------------
# time evolution driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservableSpec:
    """What to measure along a trajectory (operators act on the bare site)."""

    primary_name: str
    primary_op: np.ndarray
    corr_op: np.ndarray


@dataclass
class Trajectory:
    rows: list
    deltas: list
    su_iterations: list
    su_converged: list
    meta: dict


def evolve(s: IpepoState, tables: list[RuleTable], dt: float, n_steps: int,
           cfg: TruncationConfig, obs: ObservableSpec, chi: int = 16,
           observe_every: int | None = None, env_tol: float = 1e-11,
           start_step: int = 0, caches: dict | None = None,
           env_tracker=None, checkpoint_path=None, checkpoint_every: int = 0,
           config_blob: str = "") -> Trajectory:
    """Trotterized time loop: apply each factor's second-order PEPO, truncate,
    renormalize the per-site trace, and record observables.

    One second-order tePEPO per rule table is compiled once at ``tau = dt``
    and reused every step.  The bond-map caches are kept per Trotter factor
    (bond dimensions differ between factors), warm across steps.
    """
    from openpepo import observables as obsmod

    if dt <= 0:
        raise ValueError("dt must be positive")
    if observe_every is None:
        observe_every = max(1, int(np.ceil(n_steps / 1000)))
    pepos = [assemble_pepo(make_wii(tb, dt)) for tb in tables]
    caches = {} if caches is None else caches
    tracker = env_tracker if env_tracker is not None else obsmod.EnvTracker(chi=chi, tol=env_tol)

    rows: list = []
    deltas: list = []
    su_iters: list = []
    su_conv: list = []

    def observe(step: int, state: IpepoState, delta: float, extra_imag: float):
        env = tracker.environment(state)
        rho1 = obsmod.rdm(state, env, [0])
        rho12 = obsmod.rdm(state, env, [0, 1])
        rho13 = obsmod.rdm(state, env, [0, 2])
        val1 = np.trace(rho1 @ obs.primary_op)
        c_op = obs.corr_op
        cc = np.kron(c_op, c_op)
        v12 = np.trace(rho12 @ cc)
        v13 = np.trace(rho13 @ cc)
        mean_c = np.trace(rho1 @ c_op)
        purity = np.trace(rho1 @ rho1)
        imag = max(abs(val1.imag), abs(v12.imag), abs(v13.imag),
                   abs(purity.imag), extra_imag)
        rows.append({
            "t": step * dt,
            "obs": val1.real,
            "C12": (v12 - mean_c ** 2).real,
            "C13": (v13 - mean_c ** 2).real,
            "purity": purity.real,
            "S_h": bond_entropy(state, "h"),
            "S_v": bond_entropy(state, "v"),
            "delta_per_dt": delta / dt,
            "imag_diag": imag,
        })

    state = s
    if start_step == 0:
        state, v0 = _renormalize(state, tracker)
        observe(0, state, 0.0, abs(np.imag(v0)))

    for step in range(start_step, n_steps):
        step_delta = 0.0
        for k, pepo in enumerate(pepos):
            enlarged = apply_tepepo(state, pepo)
            state, caches[k], delta, info = itrsu(enlarged, caches.get(k), cfg)
            step_delta = max(step_delta, delta)
            su_iters.append(info["iterations"])
            su_conv.append(info["converged"])
        state, v = _renormalize(state, tracker)
        deltas.append(step_delta)
        if (step + 1) % observe_every == 0 or step + 1 == n_steps:
            observe(step + 1, state, step_delta, abs(np.imag(v)))
        if checkpoint_path and checkpoint_every and (step + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, step + 1, state, caches, tracker, config_blob)

    return Trajectory(rows=rows, deltas=deltas, su_iterations=su_iters,
                      su_converged=su_conv,
                      meta={"dt": dt, "n_steps": n_steps, "chi": chi,
                            "observe_every": observe_every,
                            "primary": obs.primary_name,
                            "state": state, "caches": caches, "tracker": tracker})


def _renormalize(state: IpepoState, tracker) -> tuple[IpepoState, complex]:
    env = tracker.environment(state)
    v = env.site_value
    if abs(v) < 1e-12:
        raise RuntimeError("per-site trace collapsed below 1e-12")
    return replace(state, a=state.a / v), v


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, step: int, state: IpepoState, caches: dict,
                    tracker, config_blob: str) -> None:
    """Binary checkpoint (site tensor, weights, bond maps, boundary seeds)."""
    payload = {
        "version": np.array(CHECKPOINT_VERSION),
        "step": np.array(step),
        "a": state.a,
        "lam_h": state.lam_h,
        "lam_v": state.lam_v,
        "config_blob": np.frombuffer(config_blob.encode(), dtype=np.uint8),
        "factor_ids": np.array(sorted(caches.keys())),
    }
    for k in sorted(caches.keys()):
        c = caches[k]
        for name in ("u_h", "v_h", "u_v", "v_v"):
            payload[f"cache_{k}_{name}"] = getattr(c, name)
    top, bot = tracker.seeds()
    payload["env_top"] = top
    payload["env_bot"] = bot
    payload["env_chi"] = np.array(tracker.chi)
    np.savez(path, **payload)


def load_checkpoint(path):
    """Returns ``(step, state, caches, (env_top, env_bot, chi), config_blob)``."""
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version")
        step = int(data["step"])
        state = IpepoState(data["a"], data["lam_h"], data["lam_v"])
        caches = {}
        for k in data["factor_ids"].tolist():
            caches[int(k)] = IsometryCache(
                u_h=data[f"cache_{k}_u_h"], v_h=data[f"cache_{k}_v_h"],
                u_v=data[f"cache_{k}_u_v"], v_v=data[f"cache_{k}_v_v"])
        env = (data["env_top"], data["env_bot"], int(data["env_chi"]))
        blob = data["config_blob"].tobytes().decode()
    return step, state, caches, env, blob
