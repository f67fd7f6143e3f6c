"""vapturn: voice activity projection for dyadic turn-taking prediction.

The package predicts, at every 20 ms frame of a two-channel conversation,
a probability distribution over the joint voice-activity pattern of both
speakers across the next two seconds, and reduces it to next-speaker
summaries used for turn shift/hold prediction.  It ships the full
pipeline: frame/VAD plumbing, the 256-state future codec, turn-event
extraction, a frozen baseline audio encoder, the dual-channel causal
transformer with multitask losses, training, the evaluation battery, and
a synthetic multilingual dialogue generator that makes everything
testable without licensed corpora.
"""

from .codec import (
    BinConfig,
    DEFAULT_BINS,
    N_STATES,
    ProjectionSummary,
    bin_marginals,
    decode_state,
    discretize_window,
    encode_state,
    label_stream,
    project_now_future,
    swap_speakers_state,
)
from .corpus import (
    Dialogue,
    DialogueManifest,
    VadFile,
    load_dialogue,
    read_manifest,
    read_vad_file,
    write_manifest,
    write_vad_file,
)
from .encoder import (
    BaselineEncoder,
    BaselineFeatureProvider,
    EncoderContract,
    FeatureProvider,
    FileFeatureProvider,
    baseline_encode,
    load_features,
    save_features,
)
from .errors import (
    AudioFormatError,
    CheckpointError,
    ConfigError,
    DimensionError,
    TrainingDivergedError,
    ValidationError,
    VapError,
)
from .events import (
    ShiftHoldSample,
    ShiftHoldStats,
    SilenceEvent,
    count_shift_hold,
    duration_histogram,
    extract_shift_hold,
    extract_silences,
)
from .evaluation import (
    REFERENCE_LID_WEIGHTED_F1,
    REFERENCE_PITCH_FLATTEN_DELTA_POINTS,
    REFERENCE_SHIFT_HOLD_BALACC,
    REFERENCE_SHIFT_HOLD_COUNTS,
    REFERENCE_TEST_LOSS,
    AuditResult,
    LidResult,
    PerturbationResult,
    ShiftHoldResult,
    eval_lid,
    eval_shift_hold,
    eval_shift_hold_by_language,
    eval_test_loss,
    eval_with_perturbation,
    format_lid_table,
    format_loss_table,
    format_perturbation_table,
    format_shift_hold_table,
    infer_trace,
)
from .frames import (
    DEFAULT_GRID,
    FrameGrid,
    VadSegments,
    VadStream,
    seconds_to_frame,
    segments_to_stream,
    stream_to_segments,
)
from .net import (
    LossBreakdown,
    ModelConfig,
    NetworkOutput,
    VapNet,
    compute_losses,
    gradient_check,
    masked_losses,
)
from .synth import (
    CorpusLayout,
    PseudoLanguageSpec,
    SyntheticDialogue,
    default_specs,
    generate_corpus,
    generate_dialogue,
)
from .training import (
    Checkpoint,
    TrainConfig,
    TrainResult,
    cap_manifests_by_duration,
    load_checkpoint,
    make_windows,
    run_training,
    save_checkpoint,
)

__version__ = "0.1.0"

FORMAT_VERSIONS = {
    "checkpoint": 1,
    "features": 1,
    "labels": 1,
}
