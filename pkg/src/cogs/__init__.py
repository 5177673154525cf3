"""cogs: a controllable dynamic Gaussian splatting engine on the CPU.

Fit time-varying Gaussian clouds to posed image sequences through a
differentiable rasterizer, learn per-Gaussian control masks from 2D
annotations, extract normalized control signals from trajectories, and
re-render scenes under user-chosen per-attribute control values.
"""

from .errors import (
    BadMagicError,
    BadVersionError,
    CheckpointError,
    CodecError,
    CogsError,
    ConfigurationError,
    DegenerateControlError,
    IngestionError,
    InputError,
    StateError,
    TruncatedCheckpointError,
)
from .gaussians import (
    Camera,
    GaussianCloud,
    SceneBox,
    covariance_from_rs,
    covariance_from_rs_backward,
    sh_eval,
)
from .raster import (
    CloudGradients,
    RasterSettings,
    RenderOutput,
    project_gaussian,
    render,
    render_backward,
)
from .nets import (
    AdamState,
    Mlp,
    adam_step,
    lr_exponential,
    mlp_backward,
    mlp_forward,
    positional_encode,
)
from .losses import (
    NeighborTable,
    build_neighbors,
    loss_diff,
    loss_mask,
    loss_norm,
    loss_rigid,
    loss_rot,
)
from .sceneio import (
    Checkpoint,
    Dataset,
    decode_png,
    encode_png,
    load_checkpoint,
    load_dataset,
    psnr,
    save_checkpoint,
    ssim,
)
from .training import (
    DeformationModel,
    DynamicTrainer,
    TrainConfig,
    deform,
    densify_and_prune,
    init_cloud,
    photometric_loss,
    train_dynamic,
)
from .control import (
    ControlConfig,
    ControlRig,
    MaskSupervision,
    SceneModel,
    build_rig,
    extract_signal,
    finetune_all,
    learn_masks,
    load_mask_supervision,
    render_with_controls,
    select_control_set,
    train_control,
)

__version__ = "0.1.0"
