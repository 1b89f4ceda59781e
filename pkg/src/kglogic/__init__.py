"""Answering first-order logical queries over incomplete knowledge graphs
by passing closed-form one-hop messages over query graphs through a small
trainable network, with an exact oracle, an optimization baseline, and a
filtered-ranking evaluation harness."""

from .backends import (
    Backend,
    EmbeddingTable,
    forward_estimate,
    load_checkpoint,
    reciprocal_embedding,
    save_checkpoint,
    score,
    truth_value,
)
from .cqd import CqdAnswerer, conjunctive_truth_value, cqd_optimize, landscape_profile
from .evaluation import EvalReport, evaluate, filtered_rank, format_report
from .kg import (
    DatasetSplit,
    KnowledgeGraph,
    SyntheticConfig,
    Triple,
    generate_synthetic,
    load_dataset,
    neighbors,
    save_dataset,
)
from .messages import (
    MessageQuery,
    encode_equality_message,
    encode_message,
    encode_message_kgecat,
    verify_closed_form,
)
from .network import (
    LmpnnParams,
    Ranking,
    answer_dnf,
    forward_conjunctive,
    init_params,
    rank_queries,
    score_and_rank,
)
from .oracle import oracle_answers
from .pretrain import KgEmbedder, TrainHyper, link_prediction_mrr, train_embeddings
from .queries import (
    CATALOG,
    EQUALITY,
    FREE,
    Atom,
    ConjunctiveQuery,
    Constant,
    EFO1Query,
    Existential,
    QueryGraph,
    QueryInstance,
    build_pattern,
    build_query_graph,
    parse_query,
    query_depth,
    serialize_query,
)
from .sampling import sample_benchmark, sample_instances
from .training import LmpnnRanker, TrainConfig, gradients, nce_loss, train_lmpnn

__version__ = "0.1.0"
