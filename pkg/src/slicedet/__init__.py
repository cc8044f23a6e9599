"""Word-level text detection on grayscale images with a numpy-only core.

The library stacks five layers: a small reverse-mode autodiff engine over
dense arrays (`grid`), a strided convolutional backbone with two-level
feature fusion (`features`), a fixed-width vertical proposal head with a
recurrent pass along the image width (`proposals`), proposal-to-line
assembly plus horizontal box refinement (`textlines`), and the training /
inference pipeline that ties them together (`pipeline`). A synthetic
corpus generator (`corpus`) and a matching evaluator (`evaluate`) make the
whole path testable end to end without external data.
"""

from .errors import (AnnotationError, ConfigError, DegenerateRegionError, FusionShapeError,
                     IngestionError, InputError, SliceDetError, UsageError)
from .grid import Grid, Tape, backward, recording
from .optim import ParamGroup, SgdOptimizer, sgd_step
from .modelio import load_params, save_model
from .features import BackboneConfig, FusedFeature, feature_shape_for
from .proposals import (Anchor, AnchorConfig, Label, RpnConfig, VerticalProposal,
                        assign_labels, decode_proposals, derive_space_boxes,
                        generate_anchors, iou, sample_minibatch, slice_ground_truth)
from .textlines import (RegressionConfig, TextLine, connect_proposals, decode_xw,
                        encode_xw, line_bbox)
from .evaluate import EvalReport, ablation_compare, compute_prf, match_detections
from .corpus import (GenConfig, SceneSample, WordAnnotation, apply_scale_rule,
                     generate_corpus, generate_scene, load_manifest, load_samples,
                     read_pgm, write_pgm)
from .pipeline import (DetectionResult, PipelineConfig, TextDetector, build_detector,
                       detect, load_detector, save_detector, train_stage1, train_stage2,
                       two_stage_train)

__version__ = "0.1.0"

__all__ = [
    "AnnotationError", "ConfigError", "DegenerateRegionError", "FusionShapeError",
    "IngestionError", "InputError", "SliceDetError", "UsageError",
    "Grid", "Tape", "backward", "recording",
    "ParamGroup", "SgdOptimizer", "sgd_step",
    "load_params", "save_model",
    "BackboneConfig", "FusedFeature", "feature_shape_for",
    "Anchor", "AnchorConfig", "Label", "RpnConfig", "VerticalProposal",
    "assign_labels", "decode_proposals", "derive_space_boxes", "generate_anchors",
    "iou", "sample_minibatch", "slice_ground_truth",
    "RegressionConfig", "TextLine", "connect_proposals", "decode_xw", "encode_xw",
    "line_bbox",
    "EvalReport", "ablation_compare", "compute_prf", "match_detections",
    "GenConfig", "SceneSample", "WordAnnotation", "apply_scale_rule", "generate_corpus",
    "generate_scene", "load_manifest", "load_samples", "read_pgm", "write_pgm",
    "DetectionResult", "PipelineConfig", "TextDetector", "build_detector", "detect",
    "load_detector", "save_detector", "train_stage1", "train_stage2", "two_stage_train",
    "__version__",
]
