"""Online video text spotting with tracked decoder queries, in plain numpy."""
from .assignment import Assignment, build_cost_matrix, hungarian_solve, match_cost
from .data import Instance, SynthConfig, SyntheticDataset, SyntheticVideo, read_annotations, write_annotations
from .geometry import RotatedBox, RoIParams, affine_point, giou, rotated_roi_align
from .losses import LossWeights
from .metrics import MotReport, clear_mot, detection_prf, evaluate, id_metrics, mostly_tracked_lost
from .model import ModelConfig, QueryEntry, QuerySet, VideoTextSpotter, Vocabulary
from .tracker import TrackerState, Trajectory, inference_step, spot_video
from .train import RunConfig, Trainer

__version__ = "0.1.0"
