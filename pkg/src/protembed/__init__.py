"""protembed: contrastive adapter training and evaluation on frozen protein
embeddings, with the data-preparation pipelines that feed it."""

from .seqio import (
    AMINO_ACIDS,
    EmbeddingSet,
    PairExample,
    ScoredPair,
    SequenceRecord,
    parse_fasta,
    read_embeddings,
    read_pairs,
    read_scored,
    validate_sequence,
    write_embeddings,
    write_fasta,
    write_pairs,
    write_scored,
)
from .profile import (
    HardNegConfig,
    ProfileMatrix,
    build_hard_negative_dataset,
    build_log_odds,
    delta_scores,
    family_eligible,
    parse_hmm_profile,
    sample_hard_negative,
)
from .cluster import (
    ClusterAssignment,
    decontaminate,
    drop_cross_group,
    greedy_cluster,
    pairwise_identity,
    two_stage_cluster,
)
from .model import (
    AdapterParams,
    LossOutput,
    OptimizerState,
    ScheduleConfig,
    TrainerConfig,
    adamw_step,
    adapter_forward,
    cosent_loss,
    cosine_lr,
    init_adapter,
    l2_normalize,
    mean_pool,
    mnrl_loss,
    train_adapter,
)
from .sampler import (
    BatchPlan,
    DatasetSpec,
    compose_group_batch,
    plan_training_batches,
    proportional_plan,
    round_robin_plan,
)
from .evaluation import (
    EvalTask,
    auc,
    delta_report,
    evaluate_task,
    knn_predict,
    macro_f1,
    recall_at_k,
    spearman,
)

__version__ = "0.1.0"
