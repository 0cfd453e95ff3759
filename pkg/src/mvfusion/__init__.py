"""Multi-view object-centric feature fusion and open-vocabulary 3D grounding."""

__version__ = "0.1.0"

from .errors import NumericalError, ValidationError
from .scene import (CameraIntrinsics, Mask3D, PointCloud, Pose, Scene, View,
                    aggregate_cloud, depth_to_points, voxel_downsample)
from .projection import (ObjectVisibility, ProjectionConfig, VisibilityMap,
                         build_visibility, in_fov, is_visible, object_visibility,
                         project_point)
from .prompts import PromptBank, QueryContext, build_context, cosine, object_prompt
from .fusion import (CropRegion, DenseFeatureMap, FeatureCloud, FusionWeights,
                     ObjectFeatureSet, crop_region, distill_loss, fuse_objectwise,
                     fuse_pointwise, object_informativeness, point_informativeness,
                     scatter_object_features)
from .grounding import (GroundingConfig, RansacConfig, SegmentationResult,
                        instance_segment, refer_probabilities, refer_segment,
                        remove_table, semantic_segment)
from .metrics import EvalRecord, ap25, iou, macc_at, miou, pr_at
from .synth import ConceptBank, SynthConfig, gen_scene, gen_view_features, make_concept_bank
