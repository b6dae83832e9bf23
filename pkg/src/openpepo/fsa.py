"""Finite-signaling-agent rule tables and their PEPO compilation.

A rule table describes a translation-invariant lattice generator as a map
from edge-signal tuples ``(e, s, w, n)`` to local operators.  Signal 0 is
the information-free background.  Rules are categorized as

* ``identity`` -- the mandatory background rule at ``(0, 0, 0, 0)``,
* ``C`` -- the head of a multi-site term,
* ``B`` -- the tail of a multi-site term,
* ``A`` -- bulk pass-through rules between head and tail,
* ``D`` -- the single rule collecting all one-local terms.

Compiling a table produces a rank-6 site tensor (a PEPO) whose network
contraction sums every valid tiling of the rules.  With first-order
prefactors this realizes the size-extensive expansion in which products of
term subsets with pairwise disjoint supports appear at all orders; the
second-order variant additionally admits products of rule pairs that never
collide on an edge, which adds every second-order product of terms
overlapping on exactly one site.

Grid convention used throughout the package: rows grow southward, columns
eastward.  The east edge of site ``(r, c)`` is the west edge of
``(r, c + 1)``; the south edge of ``(r, c)`` is the north edge of
``(r + 1, c)``.  Open boundaries fix dangling signals to the background 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "Rule",
    "RuleTable",
    "Pepo",
    "PlacedTerm",
    "ExpChannel",
    "NnnChannel",
    "builtin_rule_table",
    "builtin_term_list",
    "expsum_rule_table",
    "nnn_rule_table",
    "apply_wi_prefactors",
    "make_wii",
    "assemble_pepo",
    "contract_pepo_finite",
    "dense_cluster_expansion",
    "save_rule_table",
    "load_rule_table",
]

RULE_TYPES = ("identity", "A", "B", "C", "D", "mixed")

# Approximate-radial-profile rule tables double each listed collinear signal
# with an "unconventional" companion so a head can never latch onto the bulk
# of another term's path and fabricate a product that is not in the
# generator (the classic spurious stacked-diagonal tiling).


@dataclass(frozen=True)
class Rule:
    """One table entry: an edge-signal tuple mapped to a local operator."""

    signals: tuple[int, int, int, int]  # (e, s, w, n)
    rtype: str
    op: np.ndarray

    def __post_init__(self):
        if self.rtype not in RULE_TYPES:
            raise ValueError(f"unknown rule type {self.rtype!r}")
        object.__setattr__(self, "signals", tuple(int(x) for x in self.signals))
        op = np.asarray(self.op, dtype=complex)
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise ValueError("rule operator must be a square matrix")
        op.setflags(write=False)
        object.__setattr__(self, "op", op)


@dataclass(frozen=True)
class RuleTable:
    """A categorized signal-to-operator map over fixed signal alphabets.

    ``stage`` tracks what the entries mean: ``"bare"`` tables list the raw
    generator rules, ``"w1"`` tables carry first-order step prefactors, and
    ``"w2"`` tables hold the aggregated pair products of the second-order
    construction (entry types are then ``"mixed"``).
    """

    eta_h: int
    eta_v: int
    d_op: int
    rules: tuple[Rule, ...]
    stage: str = "bare"
    trotter_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        for rule in self.rules:
            e, s, w, n = rule.signals
            if not (0 <= e < self.eta_h and 0 <= w < self.eta_h):
                raise ValueError(f"horizontal signal out of range in rule {rule.signals}")
            if not (0 <= s < self.eta_v and 0 <= n < self.eta_v):
                raise ValueError(f"vertical signal out of range in rule {rule.signals}")
            if rule.op.shape != (self.d_op, self.d_op):
                raise ValueError("rule operator dimension does not match d_op")
        if self.stage == "bare":
            self._validate_bare()

    def _validate_bare(self):
        ident = [r for r in self.rules if r.rtype == "identity"]
        if len(ident) != 1 or ident[0].signals != (0, 0, 0, 0):
            raise ValueError("bare table needs exactly one identity rule at (0,0,0,0)")
        if not np.allclose(ident[0].op, np.eye(self.d_op)):
            raise ValueError("background rule must map to the identity operator")
        dees = [r for r in self.rules if r.rtype == "D"]
        if len(dees) != 1 or dees[0].signals != (0, 0, 0, 0):
            raise ValueError("bare table needs exactly one D rule at (0,0,0,0)")

    def rules_of_type(self, rtype: str) -> tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.rtype == rtype)


@dataclass(frozen=True)
class Pepo:
    """Numeric rank-6 site tensor with axes ``(e, s, w, n, out, in)``."""

    tensor: np.ndarray
    trotter_index: int | None = None

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=complex)
        if t.ndim != 6 or t.shape[0] != t.shape[2] or t.shape[1] != t.shape[3] \
                or t.shape[4] != t.shape[5]:
            raise ValueError(f"bad PEPO tensor shape {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "tensor", t)

    @property
    def eta_h(self) -> int:
        return self.tensor.shape[0]

    @property
    def eta_v(self) -> int:
        return self.tensor.shape[1]

    @property
    def d_op(self) -> int:
        return self.tensor.shape[4]


# ---------------------------------------------------------------------------
# sector builders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpChannel:
    """One exponential-sum coupling sector.

    ``head`` is the full C-rule operator (all scalar prefactors folded in),
    ``tail`` the bare B-side operator; each term ``(s_i, lam_i)`` contributes
    ``s_i * lam_i**dist`` per lattice leg, so a head at site a and tail at
    displacement (dx, dy) acquire the separable weight built from one term
    per leg direction.
    """

    head: np.ndarray
    tail: np.ndarray
    terms: tuple[tuple[complex, complex], ...]


@dataclass(frozen=True)
class NnnChannel:
    """A nearest/next-nearest coupling sector (the J1-J2 pattern).

    ``head`` is the C value (e.g. ``J1 * C``), ``tail`` the B value
    (e.g. ``-1j * B``), ``corner`` the pass-through A value ``J2 / J1``.
    """

    head: np.ndarray
    tail: np.ndarray
    corner: complex


def expsum_rule_table(channels, payload, d_op, trotter_index=None) -> RuleTable:
    """Build the radial-profile table for a list of exponential-sum sectors.

    Per sector with n terms the table allocates n vertical signals plus
    2n horizontal signals (a conventional and an unconventional copy, the
    latter terminating westward legs), i.e. bond dimensions
    ``eta_h = 1 + sum(2 n_q)`` and ``eta_v = 1 + sum(n_q)``.
    """
    payload = np.asarray(payload, dtype=complex)
    rules = [
        Rule((0, 0, 0, 0), "identity", np.eye(d_op)),
        Rule((0, 0, 0, 0), "D", payload),
    ]
    h_off = 1
    v_off = 1
    for ch in channels:
        head = np.asarray(ch.head, dtype=complex)
        tail = np.asarray(ch.tail, dtype=complex)
        n = len(ch.terms)
        hc = [h_off + i for i in range(n)]          # conventional horizontal
        hu = [h_off + n + i for i in range(n)]      # unconventional horizontal
        vv = [v_off + i for i in range(n)]
        for i, (s_i, lam_i) in enumerate(ch.terms):
            # heads emit east or north
            rules.append(Rule((hc[i], 0, 0, 0), "C", head))
            rules.append(Rule((0, 0, 0, vv[i]), "C", head))
            # tails terminate eastward, upward and (unconventional) westward legs
            rules.append(Rule((0, 0, hc[i], 0), "B", s_i * lam_i * tail))
            rules.append(Rule((0, vv[i], 0, 0), "B", s_i * lam_i * tail))
            rules.append(Rule((hu[i], 0, 0, 0), "B", s_i * lam_i * tail))
            # straight pass-throughs
            rules.append(Rule((hc[i], 0, hc[i], 0), "A", lam_i * np.eye(d_op)))
            rules.append(Rule((0, vv[i], 0, vv[i]), "A", lam_i * np.eye(d_op)))
            rules.append(Rule((hu[i], 0, hu[i], 0), "A", lam_i * np.eye(d_op)))
            # corners: the incoming vertical leg i is completed with weight
            # s_i * lam_i, the outgoing horizontal leg j starts fresh
            for j in range(n):
                rules.append(Rule((hc[j], vv[i], 0, 0), "A", s_i * lam_i * np.eye(d_op)))
                rules.append(Rule((0, vv[i], hu[j], 0), "A", s_i * lam_i * np.eye(d_op)))
        h_off += 2 * n
        v_off += n
    return RuleTable(h_off, v_off, d_op, rules, stage="bare", trotter_index=trotter_index)


def nnn_rule_table(channels, payload, d_op, trotter_index=None) -> RuleTable:
    """Build the nearest/next-nearest table for a list of J1-J2 sectors."""
    payload = np.asarray(payload, dtype=complex)
    rules = [
        Rule((0, 0, 0, 0), "identity", np.eye(d_op)),
        Rule((0, 0, 0, 0), "D", payload),
    ]
    h_off = 1
    v_off = 1
    for ch in channels:
        head = np.asarray(ch.head, dtype=complex)
        tail = np.asarray(ch.tail, dtype=complex)
        h1, h2 = h_off, h_off + 1   # conventional / unconventional horizontal
        v1 = v_off
        rules.append(Rule((h1, 0, 0, 0), "C", head))
        rules.append(Rule((0, 0, 0, v1), "C", head))
        rules.append(Rule((0, 0, h1, 0), "B", tail))
        rules.append(Rule((0, v1, 0, 0), "B", tail))
        rules.append(Rule((h2, 0, 0, 0), "B", tail))
        if ch.corner != 0:
            rules.append(Rule((h1, v1, 0, 0), "A", ch.corner * np.eye(d_op)))
            rules.append(Rule((0, v1, h2, 0), "A", ch.corner * np.eye(d_op)))
        h_off += 2
        v_off += 1
    return RuleTable(h_off, v_off, d_op, rules, stage="bare", trotter_index=trotter_index)


# ---------------------------------------------------------------------------
# builtin tables
# ---------------------------------------------------------------------------

def builtin_rule_table(model_id: str, params: dict):
    """Return the table (or A/B sublattice table pair) for a builtin model.

    Supported ids:

    ``"j1j2"``
        Nearest plus next-nearest Ising-type couplings ``C_j B_k`` with head
        value ``J1*C`` / tail ``-i*B`` and diagonal pass-throughs ``J2/J1``;
        the Hermitian-conjugate sector (C and B swapped) is generated
        programmatically on fresh signals and collapses away when C == B.
        params: J1, J2, C, B, D.
    ``"j1j2_symmetric"``
        The axis-symmetric variant for ``C_j B_k = X_j X_k`` where both ends
        carry ``sqrt(-i*J1)*X`` and each main-diagonal term is produced by
        two half-weight corner paths.  J1 == 0 is handled by dropping the
        two nearest-neighbor terminators.  params: J1, J2, X, D.
    ``"toric"``
        Four-site plaquette terms on an A/B checkerboard; returns a pair of
        tables.  params: J, K.
    ``"gaussian"``
        A single radial exponential-sum sector with head ``-i*t_k*C``;
        params: t_k, terms [(s_i, lam_i), ...], C, B, D, k_max.
    """
    params = dict(params)
    if model_id == "j1j2":
        return _table_j1j2(params)
    if model_id == "j1j2_symmetric":
        return _table_j1j2_symmetric(params)
    if model_id == "toric":
        return _table_toric(params)
    if model_id == "gaussian":
        return _table_gaussian(params)
    raise ValueError(f"unknown model_id {model_id!r}")


def _require(params, *names):
    missing = [n for n in names if n not in params]
    if missing:
        raise ValueError(f"incomplete params: missing {missing}")
    return [params[n] for n in names]


def _table_j1j2(params) -> RuleTable:
    j1, j2, c_op, b_op, d_op_mat = _require(params, "J1", "J2", "C", "B", "D")
    c_op = np.asarray(c_op, dtype=complex)
    b_op = np.asarray(b_op, dtype=complex)
    if j1 == 0 and j2 != 0:
        raise ValueError("the j1j2 table encodes J2 through J2/J1; use j1j2_symmetric for J1 = 0")
    corner = j2 / j1 if j1 != 0 else 0.0
    channels = [NnnChannel(head=j1 * c_op, tail=-1j * b_op, corner=corner)]
    if not np.allclose(c_op, b_op):
        # h.c. companions: swap C and B in the listed B/C rules
        channels.append(NnnChannel(head=j1 * b_op, tail=-1j * c_op, corner=corner))
    d = c_op.shape[0]
    return nnn_rule_table(channels, -1j * np.asarray(d_op_mat, dtype=complex), d)


def _table_j1j2_symmetric(params) -> RuleTable:
    j1, j2, x_op, d_op_mat = _require(params, "J1", "J2", "X", "D")
    x_op = np.asarray(x_op, dtype=complex)
    d = x_op.shape[0]
    drop_nn = j1 == 0
    j1_eff = 1.0 if drop_nn else j1
    end = np.sqrt(-1j * j1_eff) * x_op
    a_full = j2 / j1_eff
    rules = [
        Rule((0, 0, 0, 0), "identity", np.eye(d)),
        Rule((0, 0, 0, 0), "D", -1j * np.asarray(d_op_mat, dtype=complex)),
        Rule((1, 1, 0, 0), "A", a_full * np.eye(d)),
        Rule((0, 1, 2, 0), "A", 0.5 * a_full * np.eye(d)),
        Rule((1, 0, 0, 2), "A", 0.5 * a_full * np.eye(d)),
        Rule((0, 0, 1, 0), "B", end),
        Rule((0, 0, 0, 1), "C", end),
        Rule((2, 0, 0, 0), "B", end),
        Rule((0, 2, 0, 0), "C", end),
    ]
    if not drop_nn:
        rules.insert(2, Rule((0, 0, 2, 0), "C", end))
        rules.insert(3, Rule((0, 0, 0, 2), "B", end))
    return RuleTable(3, 3, d, rules, stage="bare")


def _toric_sublattice(coupling: complex, end_op: np.ndarray, pass_op: np.ndarray) -> RuleTable:
    d = end_op.shape[0]
    end = np.sqrt(-1j * coupling) * end_op
    rules = [
        Rule((0, 0, 0, 0), "identity", np.eye(d)),
        Rule((0, 0, 0, 0), "D", np.zeros((d, d))),
        Rule((1, 1, 0, 0), "C", end),
        Rule((0, 0, 2, 2), "B", end),
        Rule((2, 0, 0, 1), "A", pass_op),
        Rule((0, 2, 1, 0), "A", pass_op),
    ]
    return RuleTable(3, 3, d, rules, stage="bare")


def _table_toric(params):
    j, k = _require(params, "J", "K")
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    # sublattice A heads the all-X plaquettes and passes Z for sublattice B
    table_a = _toric_sublattice(j, sx, sz)
    table_b = _toric_sublattice(k, sz, sx)
    return table_a, table_b


def _table_gaussian(params) -> RuleTable:
    t_k, terms, c_op, b_op, d_op_mat = _require(params, "t_k", "terms", "C", "B", "D")
    k_max = params.get("k_max", 1)
    c_op = np.asarray(c_op, dtype=complex)
    ch = ExpChannel(head=-1j * t_k * c_op,
                    tail=np.asarray(b_op, dtype=complex),
                    terms=tuple((complex(s), complex(l)) for s, l in terms))
    payload = -1j * np.asarray(d_op_mat, dtype=complex) / k_max
    return expsum_rule_table([ch], payload, c_op.shape[0])


# ---------------------------------------------------------------------------
# step prefactors
# ---------------------------------------------------------------------------

def _w1_factor(rtype: str, tau: complex) -> complex:
    if rtype in ("identity", "A"):
        return 1.0
    if rtype in ("B", "C"):
        return np.sqrt(complex(tau))
    if rtype == "D":
        return complex(tau)
    raise ValueError(f"no first-order prefactor for rule type {rtype!r}")


def apply_wi_prefactors(r: RuleTable, tau: complex) -> RuleTable:
    """Attach first-order step prefactors: B/C rules gain sqrt(tau), D gains tau."""
    if r.stage != "bare":
        raise ValueError("prefactors are applied to bare tables only")
    rules = tuple(
        replace(rule, op=_w1_factor(rule.rtype, tau) * rule.op) for rule in r.rules
    )
    return RuleTable(r.eta_h, r.eta_v, r.d_op, rules, stage="w1",
                     trotter_index=r.trotter_index)


def make_wii(r: RuleTable, tau: complex) -> RuleTable:
    """Second-order table via the pair-product construction.

    Loops over all ordered pairs of rule entries (self-pairs included),
    skips pairs that have a nonzero signal in the same direction, and
    accumulates ``prefactor * op_a @ op_b`` at the summed signal tuple.
    The prefactor is ``w(a) * w(b) / 2`` in terms of the first-order
    factors, except for the identity self-pair which keeps weight 1.
    Running both orders of each pair symmetrizes the products, and the
    halved weights make the single-site background expand to
    ``1 + tau*D + tau^2*D^2/2``, i.e. the table matches ``exp(tau*g)``
    through second order on one- and two-site patches.
    """
    if r.stage != "bare":
        raise ValueError("the second-order construction starts from a bare table")
    accum: dict[tuple[int, int, int, int], np.ndarray] = {}
    for a in r.rules:
        for b in r.rules:
            if any(sa != 0 and sb != 0 for sa, sb in zip(a.signals, b.signals)):
                continue
            combined = tuple(sa + sb for sa, sb in zip(a.signals, b.signals))
            e, s, w, n = combined
            if e >= r.eta_h or w >= r.eta_h or s >= r.eta_v or n >= r.eta_v:
                raise ValueError(f"signal collision {combined} exceeds the alphabets")
            if a is b and a.rtype == "identity":
                pref = 1.0
            else:
                pref = 0.5 * _w1_factor(a.rtype, tau) * _w1_factor(b.rtype, tau)
            contrib = pref * (a.op @ b.op)
            if combined in accum:
                accum[combined] = accum[combined] + contrib
            else:
                accum[combined] = contrib
    rules = tuple(
        Rule(sig, "mixed", op) for sig, op in sorted(accum.items())
    )
    return RuleTable(r.eta_h, r.eta_v, r.d_op, rules, stage="w2",
                     trotter_index=r.trotter_index)


def assemble_pepo(r: RuleTable) -> Pepo:
    """Sum the rules of a table into the numeric rank-6 site tensor.

    Tuples not covered by any rule stay exact zero operators, so every
    rejected signal combination kills its tiling in the contraction.
    """
    t = np.zeros((r.eta_h, r.eta_v, r.eta_h, r.eta_v, r.d_op, r.d_op), dtype=complex)
    for rule in r.rules:
        e, s, w, n = rule.signals
        t[e, s, w, n] += rule.op
    return Pepo(t, trotter_index=r.trotter_index)


# ---------------------------------------------------------------------------
# finite-patch contraction (verification oracle side A)
# ---------------------------------------------------------------------------

def contract_pepo_finite(p: Pepo, rows: int, cols: int, pepo_b: Pepo | None = None) -> np.ndarray:
    """Exact dense operator of the PEPO on an open ``rows x cols`` patch.

    Dangling edge signals are fixed to the background 0.  When ``pepo_b``
    is given the two tensors alternate on the checkerboard: site ``(r, c)``
    uses ``p`` for even ``r + c`` and ``pepo_b`` otherwise.

    The returned matrix acts on the row-major tensor product of the site
    spaces (``d_op ** (rows * cols)`` dimensional).
    """
    d = p.d_op
    n_sites = rows * cols
    if d ** n_sites > 4096:
        raise ValueError("patch too large for a dense representation")
    if pepo_b is not None and (pepo_b.d_op != d):
        raise ValueError("checkerboard partner has mismatched physical dimension")

    acc = np.ones((), dtype=complex)
    labels: list[tuple] = []
    for r in range(rows):
        for c in range(cols):
            tens = p.tensor if (pepo_b is None or (r + c) % 2 == 0) else pepo_b.tensor
            idx = [slice(None)] * 6
            keep = {"e": c < cols - 1, "s": r < rows - 1, "w": c > 0, "n": r > 0}
            if not keep["e"]:
                idx[0] = 0
            if not keep["s"]:
                idx[1] = 0
            if not keep["w"]:
                idx[2] = 0
            if not keep["n"]:
                idx[3] = 0
            x = tens[tuple(idx)]
            x_labels = [name for name, k in (("e", keep["e"]), ("s", keep["s"]),
                                             ("w", keep["w"]), ("n", keep["n"])) if k]
            x_labels += ["out", "in"]
            pair_acc, pair_x = [], []
            if keep["w"]:
                pair_acc.append(labels.index(("E",)))
                pair_x.append(x_labels.index("w"))
            if keep["n"]:
                pair_acc.append(labels.index(("S", c)))
                pair_x.append(x_labels.index("n"))
            if pair_acc:
                acc = np.tensordot(acc, x, axes=(pair_acc, pair_x))
            else:
                acc = np.multiply.outer(acc, x)
            site = r * cols + c
            new_labels = [lab for i, lab in enumerate(labels) if i not in pair_acc]
            for i, lab in enumerate(x_labels):
                if i in pair_x:
                    continue
                if lab == "e":
                    new_labels.append(("E",))
                elif lab == "s":
                    new_labels.append(("S", c))
                elif lab == "out":
                    new_labels.append(("O", site))
                else:
                    new_labels.append(("I", site))
            labels = new_labels
    order = [labels.index(("O", k)) for k in range(n_sites)]
    order += [labels.index(("I", k)) for k in range(n_sites)]
    acc = acc.transpose(order)
    dim = d ** n_sites
    return acc.reshape(dim, dim)


# ---------------------------------------------------------------------------
# size-extensive expansion of placed terms (verification oracle side B)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlacedTerm:
    """A local generator term pinned to specific patch sites.

    ``sites`` is the operator support; ``footprint`` the full set of sites
    the generating signal path occupies (support plus pass-through and
    corner sites).  Two terms can appear in the same tiling only when
    their footprints are disjoint: a site can host a single rule, and
    every signal edge has both endpoints inside its term's footprint.
    """

    sites: tuple[tuple[int, int], ...]
    ops: tuple[np.ndarray, ...]
    coeff: complex = 1.0
    footprint: frozenset | None = None

    def __post_init__(self):
        if len(self.sites) != len(self.ops):
            raise ValueError("one operator per support site required")
        object.__setattr__(self, "sites", tuple((int(r), int(c)) for r, c in self.sites))
        object.__setattr__(self, "ops", tuple(np.asarray(o, dtype=complex) for o in self.ops))
        if self.footprint is None:
            object.__setattr__(self, "footprint", frozenset(self.sites))
        else:
            fp = frozenset((int(r), int(c)) for r, c in self.footprint)
            if not fp.issuperset(self.sites):
                raise ValueError("footprint must contain the operator support")
            object.__setattr__(self, "footprint", fp)


def _embed(term: PlacedTerm, rows: int, cols: int, d: int) -> np.ndarray:
    per_site = {s: o for s, o in zip(term.sites, term.ops)}
    full = np.ones((1, 1), dtype=complex)
    for r in range(rows):
        for c in range(cols):
            if (r, c) in per_site:
                full = np.kron(full, per_site[(r, c)])
            else:
                full = np.kron(full, np.eye(d))
    return term.coeff * full


def dense_cluster_expansion(terms, tau, rows, cols, mode="W1", d_op=None) -> np.ndarray:
    """Brute-force reference for the extensive expansion of ``exp(tau * G)``.

    ``W1`` sums, over every order n, ``tau**n`` times the products of n
    placed terms with pairwise disjoint path footprints (for terms without
    pass-through sites this is plain support disjointness).  ``W2``
    additionally adds ``tau**2 / 2 * T_i T_j`` for every ordered term pair
    (self-pairs included) whose operator supports intersect in exactly one
    site; it is the ground truth on one- and two-site patches, where
    crossing-path pair products cannot occur.
    """
    terms = list(terms)
    if d_op is None:
        if not terms:
            raise ValueError("d_op required when the term list is empty")
        d_op = terms[0].ops[0].shape[0]
    for t in terms:
        for r, c in t.sites:
            if not (0 <= r < rows and 0 <= c < cols):
                raise ValueError(f"term support {t.sites} outside the {rows}x{cols} patch")
    dim = d_op ** (rows * cols)
    dense = [_embed(t, rows, cols, d_op) for t in terms]
    footprints = [t.footprint for t in terms]
    supports = [frozenset(t.sites) for t in terms]

    total = np.eye(dim, dtype=complex)

    def extend(start: int, occupied: frozenset, product: np.ndarray, order: int):
        nonlocal total
        for i in range(start, len(terms)):
            if footprints[i] & occupied:
                continue
            prod = product @ dense[i]
            total += (tau ** (order + 1)) * prod
            extend(i + 1, occupied | footprints[i], prod, order + 1)

    extend(0, frozenset(), np.eye(dim, dtype=complex), 0)

    if mode == "W2":
        for i in range(len(terms)):
            for j in range(len(terms)):
                if len(supports[i] & supports[j]) == 1:
                    total += 0.5 * tau ** 2 * (dense[i] @ dense[j])
    elif mode != "W1":
        raise ValueError(f"unknown mode {mode!r}")
    return total


def builtin_term_list(model_id: str, params: dict, rows: int, cols: int):
    """Placed-term lists mirroring the builtin tables on an open patch.

    Returns ``(terms, d_op)``.  The enumeration follows the signal-path
    semantics of the corresponding table: every unordered site pair is
    generated once, with the head on the lower/earlier site.
    """
    params = dict(params)
    terms: list[PlacedTerm] = []
    if model_id == "j1j2":
        j1, j2, c_op, b_op, d_mat = _require(params, "J1", "J2", "C", "B", "D")
        c_op = np.asarray(c_op, dtype=complex)
        b_op = np.asarray(b_op, dtype=complex)
        d = c_op.shape[0]
        pairs = [((0, 1), j1), ((-1, 0), j1), ((-1, 1), j2), ((-1, -1), j2)]
        sectors = [(c_op, b_op)]
        if not np.allclose(c_op, b_op):
            sectors.append((b_op, c_op))
        for hd, tl in sectors:
            for (dr, dc), coup in pairs:
                if coup == 0:
                    continue
                for r in range(rows):
                    for c in range(cols):
                        rb, cb = r + dr, c + dc
                        if 0 <= rb < rows and 0 <= cb < cols:
                            sites = ((r, c), (rb, cb))
                            fp = set(sites)
                            if abs(dr) + abs(dc) == 2:  # corner sits above the head
                                fp.add((r - 1, c))
                            terms.append(PlacedTerm(sites, (hd, tl),
                                                    coeff=-1j * coup,
                                                    footprint=frozenset(fp)))
        terms += _one_local_terms(-1j * np.asarray(d_mat, dtype=complex), rows, cols)
        return terms, d
    if model_id == "j1j2_symmetric":
        j1, j2, x_op, d_mat = _require(params, "J1", "J2", "X", "D")
        x_op = np.asarray(x_op, dtype=complex)
        d = x_op.shape[0]
        for r in range(rows):
            for c in range(cols):
                if j1 != 0:
                    for dr, dc in ((0, 1), (-1, 0)):
                        rb, cb = r + dr, c + dc
                        if 0 <= rb < rows and 0 <= cb < cols:
                            terms.append(PlacedTerm(((r, c), (rb, cb)), (x_op, x_op),
                                                    coeff=-1j * j1))
                if j2 != 0:
                    rb, cb = r - 1, c + 1   # antidiagonal, one full-weight path
                    if 0 <= rb < rows and 0 <= cb < cols:
                        terms.append(PlacedTerm(
                            ((r, c), (rb, cb)), (x_op, x_op), coeff=-1j * j2,
                            footprint=frozenset({(r, c), (rb, cb), (r - 1, c)})))
                    rb, cb = r - 1, c - 1   # main diagonal, two half-weight paths
                    if 0 <= rb < rows and 0 <= cb < cols:
                        sites = ((r, c), (rb, cb))
                        for corner in ((r - 1, c), (r, c - 1)):
                            terms.append(PlacedTerm(
                                sites, (x_op, x_op), coeff=-0.5j * j2,
                                footprint=frozenset(set(sites) | {corner})))
        terms += _one_local_terms(-1j * np.asarray(d_mat, dtype=complex), rows, cols)
        return terms, d
    if model_id == "toric":
        j, k = _require(params, "J", "K")
        sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
        for r in range(rows - 1):
            for c in range(cols - 1):
                block = ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1))
                if (r + c) % 2 == 0:
                    terms.append(PlacedTerm(block, (sx,) * 4, coeff=-1j * j))
                else:
                    terms.append(PlacedTerm(block, (sz,) * 4, coeff=-1j * k))
        return terms, 2
    if model_id == "gaussian":
        t_k, exp_terms, c_op, b_op, d_mat = _require(params, "t_k", "terms", "C", "B", "D")
        k_max = params.get("k_max", 1)
        c_op = np.asarray(c_op, dtype=complex)
        b_op = np.asarray(b_op, dtype=complex)
        d = c_op.shape[0]

        def leg(dist: int) -> complex:
            if dist == 0:
                return 1.0
            return sum(complex(s) * complex(l) ** dist for s, l in exp_terms)

        for r in range(rows):
            for c in range(cols):
                for rb in range(rows):
                    for cb in range(cols):
                        north = rb < r
                        same_row_east = rb == r and cb > c
                        if not (north or same_row_east):
                            continue
                        dx, dy = abs(cb - c), abs(rb - r)
                        w = -1j * t_k * leg(dx) * leg(dy)
                        terms.append(PlacedTerm(((r, c), (rb, cb)), (c_op, b_op), coeff=w))
        terms += _one_local_terms(-1j * np.asarray(d_mat, dtype=complex) / k_max, rows, cols)
        return terms, d
    raise ValueError(f"unknown model_id {model_id!r}")


def _one_local_terms(payload: np.ndarray, rows: int, cols: int) -> list[PlacedTerm]:
    if not np.any(payload):
        return []
    return [PlacedTerm(((r, c),), (payload,)) for r in range(rows) for c in range(cols)]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1


def save_rule_table(table: RuleTable, path) -> None:
    """Write a table as JSON (losslessly round-trippable)."""
    doc = {
        "format": "openpepo-rule-table",
        "version": FORMAT_VERSION,
        "eta_h": table.eta_h,
        "eta_v": table.eta_v,
        "d_op": table.d_op,
        "stage": table.stage,
        "trotter_index": table.trotter_index,
        "rules": [
            {
                "e": r.signals[0], "s": r.signals[1],
                "w": r.signals[2], "n": r.signals[3],
                "type": r.rtype,
                "op_re": np.real(r.op).ravel().tolist(),
                "op_im": np.imag(r.op).ravel().tolist(),
            }
            for r in table.rules
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_rule_table(path) -> RuleTable:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "openpepo-rule-table":
        raise ValueError("not a rule-table file")
    d = doc["d_op"]
    rules = []
    for rec in doc["rules"]:
        op = (np.array(rec["op_re"]) + 1j * np.array(rec["op_im"])).reshape(d, d)
        rules.append(Rule((rec["e"], rec["s"], rec["w"], rec["n"]), rec["type"], op))
    return RuleTable(doc["eta_h"], doc["eta_v"], d, tuple(rules),
                     stage=doc["stage"], trotter_index=doc["trotter_index"])
