"""Tool-token agent harness.

Tools live in a registry under dedicated identifier tokens; dialogues follow
a tagged trajectory grammar; rewards, group advantages, losses, and
evaluation metrics are computed from parsed structure; a two-step driver
runs any policy over a wire protocol without putting tool documentation in
the prompt.
"""

from .registry import (
    ParamSpec,
    ToolDoc,
    ToolRegistry,
    ToolToken,
    build_registry,
    hierarchical_paths,
    load_registry,
    serialize_registry,
)
from .trajectory import (
    ParseError,
    Segment,
    SegmentKind,
    ToolCall,
    Trajectory,
    Turn,
    check_format,
    extract_calls,
    extract_steps,
    parse,
    serialize,
)
from .rewards import (
    GroupAdvantages,
    RewardBreakdown,
    group_advantages,
    grpo_surrogate,
    jaccard,
    reward_param,
    reward_tool,
    score,
)
from .losses import (
    LossReport,
    TrainingExample,
    aggregate_losses,
    build_phase1_examples,
    build_sft_examples,
)
from .dataconstruct import (
    CandidateSet,
    DatasetRecord,
    RecordTurn,
    SftRecord,
    format_trajectory,
    lexical_rank,
    load_dataset,
    reject_filter,
    sample_candidates,
)
from .metrics import EvalReport, eval_calling, eval_identification, evaluate_dataset
from .driver import (
    PolicyRequest,
    PolicyResponse,
    Session,
    canned_executor,
    new_session,
    prompt_render,
    run_turn,
    scripted_policy,
)
from .config import Config, load_config

__version__ = "0.1.0"
