"""Multi-resolution representation learning for cross-resolution person re-ID.

The package reconstructs every input image into an HR and an LR version with
an attention-fused multi-kernel encoder and two decoders, extracts stripe
features from both reconstructions with non-weight-sharing branches, and
matches people on the concatenated feature.
"""

__version__ = "0.1.0"

from .data import ImageRecord, read_manifest, scan_corpus, synthesize_mlr, write_manifest
from .dffn import DFFN, BranchConfig, ClassifierHeads, FeatureExtractor
from .images import ImageTensor, downsample_resize, load_image, save_image
from .losses import LossWeights
from .rrn import RRN, ReconstructionPair, RRNConfig
from .sampling import MiniBatch, MiniBatchSampler, MultiResolutionSample
from .trainer import TrainConfig, TrainState, build_state, resume, train, train_step

__all__ = [
    "ImageRecord", "ImageTensor", "MiniBatch", "MiniBatchSampler",
    "MultiResolutionSample", "ReconstructionPair", "RRN", "RRNConfig",
    "DFFN", "BranchConfig", "ClassifierHeads", "FeatureExtractor",
    "LossWeights", "TrainConfig", "TrainState",
    "build_state", "downsample_resize", "load_image", "read_manifest",
    "resume", "save_image", "scan_corpus", "synthesize_mlr", "train",
    "train_step", "write_manifest",
]
