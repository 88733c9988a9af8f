"""Ground-truth dense correspondence tooling: covisibility generation,
geometric pair sampling, flow evaluation, and the loss/refinement kernels.
"""

from .covis import (
    CovisResult,
    FlowField,
    RigidObjectsInput,
    SceneFlowInput,
    ThresholdParams,
    covis_fov_only,
    covis_rigid,
    covis_sceneflow,
    covis_static,
    supervision_mask,
    threshold_preset,
)
from .geometry import (
    DepthMap,
    Intrinsics,
    Pose,
    bilinear_sample,
    optical_axis_angle,
    project,
    ray_distance,
    transform,
    unproject,
)
from .metrics import (
    EvalMask,
    MetricRow,
    PoseErrorSample,
    aepe,
    eval_report,
    kitti_f1,
    metric_row,
    outlier_rates,
    pose_auc,
)
from .objective import (
    LossBreakdown,
    RefinementTarget,
    RobustLossParams,
    bce_loss,
    epe_loss,
    patch_similarity,
    refinement_ce_loss,
    refinement_soft_target,
    robust_charbonnier,
    robust_charbonnier_grad,
    total_loss,
)
from .refine import RefineConfig, RefineResult, refine_flow
from .sampler import (
    PairCandidate,
    SamplerConfig,
    VisibilityTable,
    VoxelGrid,
    compute_visibility,
    kubric_frame_diff_sampler,
    kubric_frame_pair,
    kubric_view_weight,
    sample_manifest,
    sample_pair,
    scannetpp_pairing,
    ta_wb_bin_plan,
    voxelize,
)
from .filters import (
    FilterReport,
    covis_fraction_filter,
    evaluate_pair,
    exposure_filter,
    solvability_check,
    zncc_grid_matcher,
)
from .epoch import EPOCH_PAIR_COUNTS, EpochPlan, PlanEntry, epoch_plan
from .warp import warp_backward, viz_grid

__version__ = "0.1.0"
