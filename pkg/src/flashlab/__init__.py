"""flashlab: a desk-scale lab for flash read-channel detection.

Simulates threshold-voltage reads under wear and retention loss, trains a
small recurrent detector from scratch, adapts it across operating conditions
with and without labels, derives read thresholds (error-optimal,
information-optimal, and data-driven), and closes the loop with an LDPC
coded pipeline.
"""

from .channel import (
    ChannelParams,
    DomainDataset,
    GrayMap,
    NoiseFamily,
    OperatingPoint,
    StateMoments,
    load_channel_params,
    make_dataset,
    mlc_params,
    params_for_cell,
    qlc_params,
    retention_shift,
    sample_voltages,
    save_channel_params,
    state_moments,
    tlc_params,
    wearout_std,
)
from .detect import (
    DpConfig,
    derive_thresholds_brute,
    derive_thresholds_dp,
    hamming_cost,
    rnn_detect,
    round_to_symbols,
    threshold_detect,
)
from .ecc import (
    CodedResult,
    Encoder,
    ParityCheckMatrix,
    build_encoder,
    coded_ber_experiment,
    load_alist,
    make_parity_check,
    nms_decode,
    save_alist,
)
from .harness import (
    ExperimentConfig,
    config_hash,
    parse_experiment_config,
    run_coded_sweep,
    run_rber_sweep,
    run_training_size_study,
)
from .neuralnet import (
    AdamState,
    GruLayerParams,
    NetworkParams,
    TrainConfig,
    forward,
    forward_many,
    gradients,
    init_xavier,
    load_checkpoint,
    loss_mse,
    save_checkpoint,
    train,
)
from .oracle import (
    ErrorRates,
    ThresholdSet,
    ber_adjacent,
    ber_two_bit,
    error_rates,
    mmi_thresholds,
    mutual_information,
    optimal_thresholds,
    ser,
)
from .transfer import (
    ClusterResult,
    DomainMeans,
    align_source_to_target,
    align_target_to_source,
    kmeans,
    model_based_dtl,
    source_means,
    uda_dtl,
    uda_threshold_detect,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # channel
    "ChannelParams",
    "DomainDataset",
    "GrayMap",
    "NoiseFamily",
    "OperatingPoint",
    "StateMoments",
    "load_channel_params",
    "make_dataset",
    "mlc_params",
    "params_for_cell",
    "qlc_params",
    "retention_shift",
    "sample_voltages",
    "save_channel_params",
    "state_moments",
    "tlc_params",
    "wearout_std",
    # oracle
    "ErrorRates",
    "ThresholdSet",
    "ber_two_bit",
    "ber_adjacent",
    "error_rates",
    "mmi_thresholds",
    "mutual_information",
    "optimal_thresholds",
    "ser",
    # neuralnet
    "AdamState",
    "GruLayerParams",
    "NetworkParams",
    "TrainConfig",
    "forward",
    "forward_many",
    "gradients",
    "init_xavier",
    "load_checkpoint",
    "loss_mse",
    "save_checkpoint",
    "train",
    # detect
    "DpConfig",
    "derive_thresholds_brute",
    "derive_thresholds_dp",
    "hamming_cost",
    "rnn_detect",
    "round_to_symbols",
    "threshold_detect",
    # transfer
    "ClusterResult",
    "DomainMeans",
    "align_source_to_target",
    "align_target_to_source",
    "kmeans",
    "model_based_dtl",
    "source_means",
    "uda_dtl",
    "uda_threshold_detect",
    # ecc
    "CodedResult",
    "Encoder",
    "ParityCheckMatrix",
    "build_encoder",
    "coded_ber_experiment",
    "load_alist",
    "make_parity_check",
    "nms_decode",
    "save_alist",
    # harness
    "ExperimentConfig",
    "config_hash",
    "parse_experiment_config",
    "run_coded_sweep",
    "run_rber_sweep",
    "run_training_size_study",
]
