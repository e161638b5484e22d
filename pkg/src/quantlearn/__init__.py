"""Learning zero-shot classifiers from quantified natural-language
explanations, on programmatically generated structured tasks."""

from .entailment import NliScores, ScorerConfig, nli_scores, pair_features
from .errors import (
    ConfigError,
    EvaluationTypeError,
    ParseError,
    QuantLearnError,
    UnknownQuantifierError,
)
from .explanations import (
    ComplexityDescriptor,
    Comparison,
    ConditionNode,
    Conjunction,
    Disjunction,
    Explanation,
    Leaf,
    Negation,
    Truth,
    all_complexities,
    complexity_of,
    evaluate_condition,
    explanation_features,
    parse_explanation,
    render_explanation,
)
from .model import (
    AttentionNet,
    ModelState,
    aggregate_attention,
    aggregate_mean,
    attention_weights,
    ce_loss,
    class_logits,
    finite_difference_check,
    gradients,
    load_checkpoint,
    predict,
    save_checkpoint,
    total_loss,
)
from .quantifiers import (
    QUANTIFIER_TABLE,
    QUANTIFIERS,
    OrdinalRelation,
    QuantifierLexicon,
    predefined_lexicon,
    probability,
    random_lexicon,
    ranking_loss,
    reference_relations,
)
from .reports import (
    AttentionReport,
    EvalReport,
    RecoveryReport,
    attention_report,
    evaluate_zero_shot,
    quantifier_recovery_report,
    run_baseline,
    run_gradient_sweep,
)
from .suite_io import load_suite, save_suite, suite_hash
from .taskgen import (
    Example,
    ExampleCounts,
    Task,
    TaskSuite,
    fat_render,
    filter_suite,
    generate_suite,
    generate_task,
    random_explanation,
    split_seen_unseen,
)
from .training import (
    Curriculum,
    TrainConfig,
    TrainHistory,
    build_curriculum,
    init_model,
    optimizer_step,
    train_curriculum,
    train_multitask,
)

__version__ = "0.1.0"
