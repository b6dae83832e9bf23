"""Tensor-network time evolution for 2D open quantum lattice models.

The package builds translation-invariant PEPO representations of
first-order extensive time-evolution operators from finite-signaling-agent
rule tables, approximates power-law interaction profiles by sums of
separable Gaussians (each expanded in complex exponentials), and evolves
an infinite PEPO density-matrix ansatz with iterative simple-update bond
truncation.  Observables are extracted through boundary-MPS environments.
"""

from openpepo.tensorops import (
    contract,
    matricize,
    pseudo_inverse,
    qr_split,
    truncated_svd,
)
from openpepo.fsa import (
    Pepo,
    Rule,
    RuleTable,
    apply_wi_prefactors,
    assemble_pepo,
    builtin_rule_table,
    contract_pepo_finite,
    dense_cluster_expansion,
    make_wii,
)
from openpepo.expfit import (
    ExpSum,
    FitConfig,
    GaussianBasis,
    eval_basis,
    fit_exp_sum,
    fit_power_law,
    gaussian_to_expsum,
)
from openpepo.models import (
    Channel,
    ModelSpec,
    VectorizedTermSet,
    build_model,
    generator_rule_tables,
    kac_normalization,
    thermal_generator,
    vectorize,
)
from openpepo.ipepo import (
    IpepoState,
    IsometryCache,
    TruncationConfig,
    apply_tepepo,
    bond_entropy,
    evolve,
    itrsu,
    product_state,
)
from openpepo.observables import (
    BoundaryEnv,
    boundary_env,
    expectations,
    rdm,
    trace_tensor,
)
from openpepo.reference import dense_evolve, exact_dephasing, mean_field

__all__ = [
    "contract", "matricize", "truncated_svd", "qr_split", "pseudo_inverse",
    "Rule", "RuleTable", "Pepo", "builtin_rule_table", "apply_wi_prefactors",
    "make_wii", "assemble_pepo", "contract_pepo_finite", "dense_cluster_expansion",
    "ExpSum", "GaussianBasis", "FitConfig", "fit_exp_sum", "gaussian_to_expsum",
    "fit_power_law", "eval_basis",
    "Channel", "ModelSpec", "VectorizedTermSet", "kac_normalization",
    "build_model", "vectorize", "thermal_generator", "generator_rule_tables",
    "IpepoState", "IsometryCache", "TruncationConfig", "product_state",
    "apply_tepepo", "itrsu", "evolve", "bond_entropy",
    "BoundaryEnv", "trace_tensor", "boundary_env", "rdm", "expectations",
    "dense_evolve", "exact_dephasing", "mean_field",
]
