"""Operator-level equivalence checks between compiled tables and brute-force
expansions; used by the command-line ``verify`` subcommand.

Each check returns a record ``{name, passed, value, tol}`` where ``value``
is the measured residual (or ratio) and ``tol`` its bound.
"""

from __future__ import annotations

import numpy as np

from openpepo.fsa import (
    apply_wi_prefactors,
    assemble_pepo,
    builtin_rule_table,
    builtin_term_list,
    contract_pepo_finite,
    dense_cluster_expansion,
    make_wii,
)
from openpepo.models import (
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Z,
    build_model,
    dense_vec_generator,
    kac_normalization,
    site_layout_permutation,
    vectorize,
)
from openpepo.reference import dense_evolve, exact_dephasing, patch_dephasing_shells

_C_TEST = np.array([[0.0, 1.0], [0.3, 0.0]], dtype=complex)
_B_TEST = _C_TEST.conj().T
_D_TEST = np.array([[0.5, 0.1], [0.1, -0.2]], dtype=complex)

TABLE_CASES = {
    "table-nnn": ("j1j2", {"J1": 0.7, "J2": 0.35, "C": _C_TEST, "B": _B_TEST, "D": _D_TEST}),
    "table-nnn-symmetric": ("j1j2_symmetric",
                            {"J1": 0.6, "J2": 0.25, "X": SIGMA_X, "D": _D_TEST}),
    "table-plaquette": ("toric", {"J": 0.8, "K": 0.5}),
    "table-radial": ("gaussian", {
        "t_k": 0.9, "terms": [(0.6, 0.55), (0.4, 0.2)],
        "C": _C_TEST, "B": _B_TEST, "D": _D_TEST, "k_max": 1,
    }),
}


def _tables_and_terms(case, rows, cols):
    model_id, params = TABLE_CASES[case]
    built = builtin_rule_table(model_id, params)
    terms, d_op = builtin_term_list(model_id, params, rows, cols)
    pair = built if isinstance(built, tuple) else (built, None)
    return pair, terms, d_op


def check_w1_equivalence(taus=(0.1, 0.01, 0.01j), patches=((1, 1), (1, 2), (2, 2), (2, 3)),
                         tol=1e-12) -> list[dict]:
    """First-order PEPO contraction vs disjoint-support expansion."""
    out = []
    for case in TABLE_CASES:
        worst = 0.0
        for rows, cols in patches:
            (ta, tb), terms, d_op = _tables_and_terms(case, rows, cols)
            for tau in taus:
                pepo_a = assemble_pepo(apply_wi_prefactors(ta, tau))
                pepo_b = assemble_pepo(apply_wi_prefactors(tb, tau)) if tb else None
                lhs = contract_pepo_finite(pepo_a, rows, cols, pepo_b=pepo_b)
                rhs = dense_cluster_expansion(terms, tau, rows, cols, mode="W1", d_op=d_op)
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        out.append({"name": f"w1/{case}", "passed": worst <= tol,
                    "value": worst, "tol": tol})
    return out


def check_w2_order(tau=0.05, tol_ratio=7.0) -> list[dict]:
    """Second-order PEPO vs the pair-augmented expansion: third-order scaling."""
    out = []
    for case in ("table-nnn", "table-nnn-symmetric", "table-radial"):
        resids = []
        for t in (tau, tau / 2):
            (ta, _), terms, d_op = _tables_and_terms(case, 1, 2)
            lhs = contract_pepo_finite(assemble_pepo(make_wii(ta, t)), 1, 2)
            rhs = dense_cluster_expansion(terms, t, 1, 2, mode="W2", d_op=d_op)
            resids.append(float(np.max(np.abs(lhs - rhs))))
        if resids[0] < 1e-14:
            passed, ratio = True, np.inf
        else:
            ratio = resids[0] / max(resids[1], 1e-300)
            passed = ratio >= tol_ratio
        out.append({"name": f"w2-order/{case}", "passed": passed,
                    "value": ratio, "tol": tol_ratio})
    return out


def check_vectorization(n_models=20, seed=7, tol=1e-12) -> list[dict]:
    """Channel-list assembly vs the directly built vectorized Lindbladian."""
    from openpepo.models import Channel, ModelSpec, ShortRangeCoupling
    from openpepo.reference import dense_liouvillian

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        c_op = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        h_loc = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        h_loc = 0.5 * (h_loc + h_loc.conj().T)
        l_op = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        model = ModelSpec(
            name="random", d=2,
            channels=(Channel(c_op, c_op.conj().T, ShortRangeCoupling(0.8, 0.0)),
                      Channel(c_op.conj().T, c_op, ShortRangeCoupling(0.8, 0.0))),
            local_terms=((1.0, h_loc),),
            jumps=((0.4, l_op),),
            initial_rho=np.eye(2) / 2,
            primary_name="mx", primary_op=SIGMA_X, corr_op=SIGMA_X,
        )
        lhs = dense_vec_generator(vectorize(model), 1, 2)
        ref = dense_liouvillian(model, 1, 2)
        perm = site_layout_permutation(2, 2)
        rhs = ref[np.ix_(perm, perm)]
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return [{"name": "vectorization/random-2site", "passed": worst <= tol,
             "value": worst, "tol": tol}]


def check_kac(tol=1e-6, radius=1500) -> list[dict]:
    """Closed form vs truncated lattice sums with an integral tail."""
    out = []
    for alpha in (4.0, 6.0):
        total = 0.0
        for x in range(1, radius + 1):
            y = np.arange(0, radius + 1, dtype=float)
            r2 = x * x + y * y
            vals = r2 ** (-alpha / 2.0)
            total += vals[0] + 2.0 * vals[1:].sum()
        total *= 2.0
        y = np.arange(1, radius + 1, dtype=float)
        total += 2.0 * np.sum(y ** (-alpha))
        tail = 2.0 * np.pi * radius ** (2.0 - alpha) / (alpha - 2.0)
        err = abs(total + tail - kac_normalization(alpha))
        out.append({"name": f"kac/alpha={alpha:g}", "passed": err <= tol,
                    "value": err, "tol": tol})
    return out


def check_dephasing_gate(tol=1e-8, points=None, include_2x3=True) -> list[dict]:
    """Closed-form dephasing vs dense evolution on periodic patches."""
    if points is None:
        points = [
            (2, 2, 1.0, 1.0, 3.0, 1.0),
            (2, 2, 0.5, 1.0, 3.0, 0.7),
            (2, 2, 1.0, 0.6, 4.0, 1.2),
            (2, 2, 2.0, 1.0, 6.0, 0.5),
        ]
        if include_2x3:
            points.append((2, 3, 1.0, 1.0, 3.0, 0.8))
            points.append((2, 3, 0.7, 1.3, 5.0, 0.6))
    out = []
    worst = 0.0
    for rows, cols, j, gamma, alpha, t_max in points:
        model = build_model("ising", {"J": j, "h": 0.0, "gamma": gamma, "alpha": alpha})
        traj = dense_evolve(model, rows, cols, "periodic", t_max, t_max / 8)
        mx = traj.site_expectation(SIGMA_X, (0, 0), rows, cols, 2).real
        shells = patch_dephasing_shells(j, alpha, rows, cols)
        ref = exact_dephasing(j, gamma, alpha, traj.times, shells=shells)
        worst = max(worst, float(np.max(np.abs(mx - ref))))
    out.append({"name": "dephasing-gate/periodic-patches", "passed": worst <= tol,
                "value": worst, "tol": tol})
    return out


def run_all(deep=True) -> list[dict]:
    checks = []
    checks += check_w1_equivalence()
    checks += check_w2_order()
    checks += check_vectorization()
    checks += check_kac()
    checks += check_dephasing_gate(include_2x3=deep)
    return checks
