"""coopdiff: desk-scale training of one-step diffusion-GAN generators.

The adversarial objective is smoothed by the generator itself: detached
generations from less-corrupted inputs act as the real side, generations from
more-corrupted inputs as the fake side, alongside SNR-weighted reconstruction
and consistency regression with a staircase-annealed weight.
"""

from .annealing import AnnealConfig, anneal_multiplier, annealed_weight
from .adaptation import (
    AdaptConfig,
    AdaptResult,
    adapt_stage1_loss,
    adapt_stage2_loss,
    run_adaptation,
    zero_snr_student_table,
)
from .datasets import SyntheticDataset, make_dataset
from .errors import (
    ConfigError,
    ContractViolationError,
    CoopDiffError,
    NonFiniteLossError,
    ScheduleMismatchError,
    SingularConversionError,
    WeightAlgebraError,
)
from .evaluation import (
    EvalReport,
    StabilitySummary,
    evaluate_samples,
    high_quality_fraction,
    mmd,
    mode_coverage,
    sliced_w2,
    stability_trace,
)
from .losses import (
    LossWeights,
    consistency_loss,
    consistency_weight,
    coop_adv_d_loss,
    coop_adv_g_loss,
    feature_distance,
    latent_perceptual,
    mse_distance,
    reconstruction_loss,
    reconstruction_weight,
    variant_adv_losses,
)
from .networks import (
    DiscriminatorSpec,
    EmaState,
    FrozenFeatureExtractor,
    GeneratorSpec,
    MLPDiscriminator,
    MLPGenerator,
    UNetDiscriminator,
    UNetGenerator,
    discriminate,
    ema_update,
    extract_features,
    generate,
    half_discriminator_from_generator,
)
from .parameterizations import Prediction, convert, to_eps, to_v, to_x0
from .prior import PriorStats, estimate_stats, sample_informative_prior
from .schedules import (
    SCHEDULE_PRESETS,
    ScheduleConfig,
    ScheduleTable,
    SkipMap,
    build_schedule,
    corrupt,
    forward_chain,
    schedule_preset,
    skip,
)
from .trainer import (
    NetworkConfig,
    TrainConfig,
    TrainState,
    evaluate_state,
    init_state,
    load_train_state,
    run,
    run_ablation,
    sample_from_checkpoint,
    sample_one_step,
    save_train_state,
    train_step,
)
from .weights import WeightDelta, WeightSet, apply_lora, combine

__version__ = "0.1.0"
