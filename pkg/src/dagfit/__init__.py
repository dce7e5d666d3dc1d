"""Causal DAG discovery from observational and interventional categorical data.

The library learns a directed acyclic graph by alternating two stages:
fitting one masked-input conditional estimator per variable on observational
data, and updating per-edge existence and orientation logits from how well
sampled graphs explain interventional data. Exact-oracle utilities check the
method's convergence conditions outright on small models.
"""

from .cgm import (
    Cgm,
    Dataset,
    DeterministicCpd,
    InterventionBlock,
    JointTable,
    NeuralCpd,
    TableCpd,
    add_latent_confounders,
    exact_int_joint,
    exact_joint,
    generate_dataset,
    make_deterministic_cgm,
    make_neural_cgm,
    make_product_cgm,
    sample_int,
    sample_obs,
)
from .confounders import ConfounderReport, SplitGamma, detect_confounders, lc_score, split_update
from .convergence import ConditionReport, check_conditions, exact_gamma_gradient, max_lambda
from .errors import CapacityError, ConfigError, DataFormatError, ParameterError
from .estimators import (
    Adam,
    MlpEstimator,
    Sgd,
    TableEstimator,
    adam_update,
    forward_logprob,
    load_estimator,
    save_estimator,
    table_estimator_from_cgm,
    train_step,
)
from .fitting import (
    EdgeStats,
    FitConfig,
    FitResult,
    bengio_gamma_gradient,
    collect_edge_stats,
    fit,
    gamma_gradient,
    gradient_variance_probe,
    graph_fit_step,
    make_graph_fit_state,
    predict_graph,
    sample_graphs,
    theta_gradient,
    theta_stage,
)
from .graphs import (
    CausalGraph,
    EdgeParams,
    OrderPermutation,
    VarMeta,
    edge_precision_recall,
    enforce_acyclic_order,
    gen_graph,
    is_acyclic,
    order_objective,
    read_graph_text,
    shd,
    write_graph_text,
)
from .bif import BifDocument, load_bif, parse_bif, parse_bif_document, unparse_bif
from .networks import chain3_cgm, fixture_path, load_builtin, xor_fork_cgm
from .storage import read_dataset, write_dataset

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
