"""Zero-shot category-level relative pose estimation from dense feature
grids and depth, plus the synthetic benchmark used to validate it."""

from .errors import (
    AllViewsUnusable,
    BadMagic,
    DataError,
    DegenerateConfiguration,
    EmptyForeground,
    EstimationError,
    InvalidDepth,
    MissingFile,
    MissingLabel,
    NoConsensus,
    NoValidDepth,
    NoVisibleParts,
    SamplingExhausted,
    SchemaError,
    TruncatedFile,
    VersionUnsupported,
    ZsposeError,
)
from .features import (
    Correspondence,
    CorrespondenceSet,
    CyclicalDistanceMap,
    FeatureGrid,
    GridPoint,
    cyclical_distance_map,
    dual_softmax_match,
    dual_softmax_scores,
    kmeans_diversify,
    nearest_neighbor,
    normalize_grid,
    select_correspondences_cyclical,
    select_correspondences_mutual_nn,
    sinkhorn_match,
    sinkhorn_plan,
)
from .geom import (
    CameraIntrinsics,
    RigidTransformSE3,
    RigidTransformSim3,
    Rotation3,
    compose,
    geodesic_rotation_error,
    invert,
    project_to_rotation,
    relative_gt_pose,
)
from .io import (
    CropRect,
    Dataset,
    DepthImage,
    FrameBundle,
    FrameRecord,
    SequenceManifest,
    inpaint_depth,
    load_sequence,
    read_depth_file,
    read_feature_file,
    write_depth_file,
    write_feature_file,
    write_sequence_manifest,
)
from .pipeline import Matcher, PipelineConfig, PipelineResult, estimate_pose, propagate_to_sequence
from .solver import (
    IcpResult,
    PointCloud,
    PointPair3D,
    PoseEstimate,
    RansacConfig,
    fuse_target_cloud,
    grid_to_pixel,
    icp_sim3,
    ransac_pose,
    umeyama,
    unproject,
)
from .viewsel import ViewScore, ViewStrategy, score_views, select_best_view
from .evaluation import (
    CategoryReport,
    EvalReport,
    PairResult,
    PairSpec,
    error_histogram,
    evaluate_pairs,
    load_pairs,
    lower_median,
    summarize,
    write_pairs_jsonl,
)
from .synth import (
    CategoryPrototype,
    InstanceSpec,
    RenderedView,
    SynthRenderConfig,
    gen_benchmark,
    gen_category,
    render_view,
    ring_camera,
    sample_instance,
)

__version__ = "0.1.0"
