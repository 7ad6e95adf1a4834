"""Partial person re-identification: alignment, crop synthesis, hallucination, stride features, ranking metrics."""

from .alignment import (JOINT_ORDER, JointName, JointSet, ReferenceFrame, align_image, align_with_report,
                        compute_reference, estimate_similarity, select_reliable)
from .cropgen import CropSpec, generate_dataset, overlap, sample_crop_pair
from .errors import *  # noqa: F401,F403
from .evaluation import (EvalReport, LabeledSet, ProtocolConfig, cmc, distance_matrix, mean_average_precision,
                         run_protocol)
from .features import CombinedFeature, HistogramEmbedder, StrideFeatures, combine, preset_256
from .hallucination import (CycleObjectiveConfig, LinearMap, TwoLayerMap, baseline_fill, cycle_loss,
                            evaluate_objective, train_cycle)
from .imaging import CropRect, ImageBuffer, SimilarityTransform, ValidityMask, crop, resize, warp_similarity
from .rng import SplitMix64, substream

__version__ = "0.1.0"
