"""Streaming novel-view synthesis for multi-view RGB-D video.

Input views are forward-warped into the target camera with pixel-sized 3D
Gaussians; temporally filtered input depths are fused into an image-space
truncated signed distance field whose ray-marched depth guides the blending
of the warped views into a view- and temporally consistent novel view.
"""

from .camera import Camera, Ray, project, ray_for_pixel, select_nearest_views, unproject
from .raster import (
    INVALID_DEPTH,
    ColorImage,
    NormalMap,
    ScalarMap,
    downscale_quarter,
    maxpool3,
    normals_from_depth,
    sample_bilinear,
    upscale_bilinear,
)
from .tempfilter import FilterParams, ViewTemporalState, difference_mask, filter_depth
from .splat import Splat, SplatSet, gaussians_from_view, render_splats
from .tsdf import (
    RaymarchResult,
    TemporalContext,
    TsdfContext,
    TsdfParams,
    fused_tsdf,
    fusion_weight,
    raymarch_depth,
    signed_distance,
    splat_masks_to_target,
    update_accumulated_weight,
)
from .blend import (
    BlendFeatures,
    BlendWeights,
    ViewRender,
    blend_foreground,
    composite_background,
    compute_features,
    depth_blend_residual,
    distance_weights,
    heuristic_weights,
    uniform_weights,
)
from .metrics import psnr, ssim, l1_255, tcc, sdt, sdv
from .scenegen import (
    BoxPrimitive,
    NoiseSpec,
    PlanePrimitive,
    SceneSpec,
    SpherePrimitive,
    Texture,
    add_noise,
    render_scene,
    voxel_tsdf_oracle,
)
from .pipeline import FrameState, PipelineConfig, ViewFrame, ingest_dataset, run_frame, run_sequence

__version__ = "0.1.0"
