"""Federated learning over width-slimmable networks with a superposition-coded uplink."""

from .analysis import (
    ConvergenceParams,
    MaskedQuadraticSim,
    PowerObjective,
    PowerSplitResult,
    estimate_data_skew,
    golden_section,
    gradient_noise_bound,
    ips_width_selection,
    optimal_st_weights,
    optimality_gap_bound,
    optimize_power_split,
)
from .channel import (
    ChannelConfig,
    DecodingOutcome,
    Rayleigh,
    Rician,
    Twdp,
    config_for_decode_probs,
    decode,
    decode_probabilities,
    decode_thresholds,
    sample_fading,
    sinr,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config, serialize_config
from .datasets import Dataset, Shard, dirichlet_partition, load_idx, synth_dataset, write_idx
from .federation import FederationConfig, RoundState, SlimFLRun, VanillaRun, aggregate, evaluate
from .metrics import CostModel, RoundMetrics, detect_convergence, energy_report
from .rng import stream
from .slimnet import (
    LayerSpec,
    Layout,
    ModelCost,
    SlimmableParams,
    WidthMask,
    backward,
    build_mask,
    complement_bits,
    forward,
    init_params,
    load_checkpoint,
    model_cost,
    save_checkpoint,
)
from .training import (
    AdamState,
    LocalOptimizer,
    LossReport,
    StepResult,
    TrainConfig,
    adam_update,
    cross_entropy,
    ipkd_loss,
    sandwich_step,
    superposed_step,
    widthwise_step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
