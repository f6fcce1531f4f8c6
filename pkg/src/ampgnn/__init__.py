"""Message-passing MIMO detection: AMP, the unfolded AMP-GNN network, baselines and benchmarks."""

from .amp import NumericalError, amp_detect, denoise_pam
from .baselines import map_detect, mmse_detect, oamp_detect, oracle_marginals
from .bench import BenchSpec, count_ops, run_robustness_csi, run_robustness_users, run_ser_sweep
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .detector import AmpGnnConfig, SoftOutput, amp_gnn_detect
from .mpnn import MpnnParams, init_params
from .system import Constellation, LinearSystem, embed_real, generate_batch, make_constellation, sample_channel
from .train import TrainConfig, train

__all__ = [
    "AmpGnnConfig", "BenchSpec", "Checkpoint", "CheckpointError", "Constellation", "LinearSystem",
    "MpnnParams", "NumericalError", "SoftOutput", "TrainConfig", "amp_detect", "amp_gnn_detect",
    "count_ops", "denoise_pam", "embed_real", "generate_batch", "init_params", "load_checkpoint",
    "make_constellation", "map_detect", "mmse_detect", "oamp_detect", "oracle_marginals",
    "run_robustness_csi", "run_robustness_users", "run_ser_sweep", "sample_channel", "save_checkpoint",
    "train",
]
