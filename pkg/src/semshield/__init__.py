"""Semantic shielding for multi-concept text-to-image attention control.

Training-free protection of concept regions during diffusion sampling:
concept regions are extracted from the model's own cross/self attention,
and each region's cross-attention is then masked against every *other*
concept's noun and attribute tokens, leaving shared context untouched.
Includes a deterministic toy denoiser so the whole mechanism is
verifiable at desk scale, plus a benchmark/ablation harness.
"""

from .attention import (
    MASK_NEG,
    AttentionRecord,
    AttnMap,
    aggregate,
    apply_heads_mean,
    attention,
    masked_softmax,
    minmax_norm,
    resample_mask,
)
from .bench import (
    RegionAssignment,
    ScoreReport,
    SweepReport,
    comparison_sweep,
    run_benchmark,
    threshold_sweep,
    token_mask_ablation,
)
from .container import dump_generation, read_container, write_container
from .datasets import PromptDataset, generate_dataset
from .denoiser import DenoiserBackend, Hooks, ToyDenoiser, ToyTokenizer
from .errors import (
    AlignmentError,
    BackendFailure,
    DegenerateRow,
    EmptySelection,
    InvalidAssignment,
    MalformedResponse,
    MissingRecord,
    OverlapError,
    RecordMismatch,
    SemShieldError,
    ShapeMismatch,
    TemplateMismatch,
)
from .extraction import (
    ExtractionConfig,
    RegionSet,
    anchor_points,
    concept_regions,
    cross_normalize,
    direct_cross_regions,
    extract,
)
from .pipeline import (
    GenerationResult,
    PipelineConfig,
    generate,
    pass1_record,
    pass2_protected,
    plain_generate,
)
from .prompts import (
    ConceptSpan,
    ParsedPrompt,
    Template,
    TokenSpan,
    map_to_tokens,
    parse_freeform,
    parse_prompt,
    parse_template,
)
from .protection import (
    ProtectionMask,
    build_manual_mask,
    build_protection_mask,
    protected_attention,
)
from .scenario import SyntheticScene, iou, two_blob_scene, uniform_scene
from .scoring import (
    RemoteScorer,
    ScoreItem,
    StubScorer,
    blip_vqa_questions,
    internvl_protocol,
    parse_score_response,
)

__version__ = "0.1.0"
