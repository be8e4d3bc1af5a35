"""
resetedit
Resettable starting latents for diffusion image editing.

Modules:
- diffusion_core: DDIM sampling, inversion and inversion-error decomposition.
- denoiser: Noise predictors (toy network, analytic oracle, test constants).
- residual_codec: Vector-quantized compression of z_T - z_0.
- latent_injector: Bit serialization, injection and extraction networks.
- pixel_codec: Toy image VAE and latent refinement.
- reset_pipeline: Generate, recover, edit and compare workflows.
- dataset: Procedural coloured-shape images.
- config: YAML configuration loading and validation.
- tensor_io, checkpoint, run_manifest, models: Persistence.
"""

from .config import Config, ConfigLoader, load_config
from .dataset import SyntheticDataset, classify_image, make_dataset
from .diffusion_core import (
    NULL_CONDITION,
    Condition,
    GuidanceConfig,
    NoiseSchedule,
    StepErrorReport,
    ddim_step,
    decompose_step_error,
    invert_step,
    invert_trajectory,
    sample_trajectory,
    step_coefficients,
)
from .denoiser import NoisePredictor, build_predictor, predict_noise, train_denoiser
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    OptimizationError,
    TimestepRangeError,
    TrainingDivergedError,
)
from .latent_injector import (
    BitMessage,
    Injector,
    NoiseLayer,
    apply_noise,
    deserialize_indices,
    extract,
    inject,
    injector_loss,
    serialize_indices,
    train_injector,
)
from .pixel_codec import PixelCodec, decode, encode, optimize_latent, train_pixel_codec
from .reset_pipeline import (
    GenerationRecord,
    ModelBundle,
    RecoveryRecord,
    compare_baseline,
    edit,
    generate_with_embedding,
    metrics,
    recover_starting_latent,
)
from .residual_codec import (
    IndexMap,
    ResidualCodec,
    codec_loss,
    compress,
    quantize,
    reconstruct,
    train_codec,
)
from .tensor_io import load_tensor, save_tensor

__all__ = [
    "Config",
    "ConfigLoader",
    "load_config",
    "SyntheticDataset",
    "make_dataset",
    "classify_image",
    "Condition",
    "NULL_CONDITION",
    "GuidanceConfig",
    "NoiseSchedule",
    "StepErrorReport",
    "step_coefficients",
    "ddim_step",
    "invert_step",
    "sample_trajectory",
    "invert_trajectory",
    "decompose_step_error",
    "NoisePredictor",
    "build_predictor",
    "predict_noise",
    "train_denoiser",
    "ContractError",
    "TimestepRangeError",
    "ConfigError",
    "FormatError",
    "TrainingDivergedError",
    "OptimizationError",
    "BitMessage",
    "Injector",
    "NoiseLayer",
    "serialize_indices",
    "deserialize_indices",
    "inject",
    "extract",
    "apply_noise",
    "injector_loss",
    "train_injector",
    "PixelCodec",
    "decode",
    "encode",
    "optimize_latent",
    "train_pixel_codec",
    "GenerationRecord",
    "RecoveryRecord",
    "ModelBundle",
    "generate_with_embedding",
    "recover_starting_latent",
    "edit",
    "compare_baseline",
    "metrics",
    "IndexMap",
    "ResidualCodec",
    "quantize",
    "compress",
    "reconstruct",
    "codec_loss",
    "train_codec",
    "save_tensor",
    "load_tensor",
]
