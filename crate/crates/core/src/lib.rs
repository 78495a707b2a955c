//! Masked-image-modeling pretraining with lesion-aware patch selection and
//! an adaptive masking-ratio schedule, plus the segmentation finetuning,
//! evaluation and experiment tooling around it.

pub mod data;
pub mod entropy;
pub mod error;
pub mod metrics;
pub mod model;
pub mod patching;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod selection;

pub use data::{generate_dataset, generate_sample, load_dataset, load_image, Sample, SyntheticConfig};
pub use error::{Error, Result};
pub use metrics::{compute_metrics, Aggregation, MetricSummary, SegMetrics};
pub use model::{
    init_weights, read_checkpoint, reconstruct, reconstruction_gradients, reconstruction_loss, segment, transfer_encoder,
    write_checkpoint, ModelWeights, NetConfig, Nonlinearity, Tensor,
};
pub use pipeline::{
    ablate, finetune, pretrain, schedule_sweep, split_dataset, AblationConfig, AblationReport, Arm,
    FinetuneConfig, PretrainConfig, SelectionMode, SplitSpec, TrainConfig,
};
pub use patching::{
    apply_mask, patchify, unpatchify, ImageTensor, MaskFill, MaskPlan, PatchGrid, PatchLabel,
    PatchOrdering, PatchSet,
};
pub use schedule::{masked_count, masking_ratio, ScheduleMode, ScheduleParams};
pub use selection::{
    cluster_patches, patch_similarity, select_patches, ClusterAssignment, ClusterMethod,
    SimilarityMatrix,
};
