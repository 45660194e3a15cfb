from .eica import EicaConfig, QuadrantReport, batch_classify, classify, localize
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .highorder import (GlobalLocalFilter, HABlock, HighOrderAttention, InteractionConfig,
                        SqueezeAttention, channel_schedule)
from .metrics import ConfusionCounts, MetricsReport, confusion, metrics
from .mha_block import IEAB, BranchActivations, MHABlock, VoteBlock
from .network import ExplainabilityBundle, MHAUNet, NetworkConfig, load_checkpoint, predict, save_checkpoint
from .training import (DatasetManifest, LossWeights, TrainConfig, bce_dice_loss, load_batch, lr_at,
                       read_manifest, train)

__version__ = "0.1.0"
