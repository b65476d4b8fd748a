"""voxedit: text-guided editing of 3D objects on explicit feature voxel grids.

The engine reconstructs a dense feature grid from posed images, optimizes
an edited copy under externally supplied per-pixel guidance gradients
coupled to the original by a volumetric correlation regularizer, lifts 2D
attention maps into volumetric attention fields, and localizes the edit
with a seeded graph-cut segmentation followed by a per-voxel merge.
"""

__version__ = "0.1.0"

from .attention import FileMapSource, LiftConfig, LiftResult, MapRecorder, lift_attention
from .backends import (
    BackendError,
    GuidanceBackend,
    HttpBackend,
    MockTargetBackend,
    RecordingBackend,
    ReplayBackend,
    make_backend,
)
from .cameras import CameraPose, PoseSampler, Ray, RayBundle, generate_rays, look_at, ring_poses
from .datasets import Dataset, load_dataset, save_dataset
from .editing import AnnealSchedule, EditConfig, EditResult, edit, sample_timestep
from .formats import (
    load_grid,
    load_mask,
    load_png,
    read_pfm,
    save_grid,
    save_mask,
    save_png,
    write_pfm,
)
from .grids import (
    AttentionGrid,
    FeatureGrid,
    SamplePoint,
    activate,
    trilinear_sample,
    trilinear_scatter_add,
)
from .losses import (
    AdamState,
    RegularizerConfig,
    adam_step,
    correlation_loss,
    correlation_plus_rgb_loss,
    image_loss,
    psnr,
)
from .pipeline import PipelineError, render_turntable, run_pipeline
from .recon import ReconConfig, ReconResult, reconstruct
from .render import RenderConfig, RenderedImage, render, render_attention, render_backward
from .segmentation import (
    SegConfig,
    SegGraph,
    VoxelMask,
    build_graph,
    label_probabilities,
    merge,
    min_cut,
    segment,
)
