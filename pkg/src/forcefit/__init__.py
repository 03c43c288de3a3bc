"""forcefit: physics-based hand-object pose refinement via learned contact forces."""

from .contact import AnnealSchedule, ContactParams, annealed_z, contact_probability
from .diffcore import (
    BatchSpec,
    EnergyModel,
    GradientReport,
    ParamVector,
    evaluate_with_gradient,
    finite_difference_gradient,
)
from .energy import EnergyBreakdown, EnergyWeights
from .evaluation import (
    MetricsReport,
    contact_map_from_pose,
    inject_finger_noise,
    mpjpe,
    pr_auc,
    roc_auc,
    score_scene,
)
from .forces import ForceField, PhysicsConstants, VertexForceState, init_force_field
from .geometry import TriMesh, SignedDistanceResult, sample_vertices, signed_distance_to_mesh
from .kinematics import HandDoF, ObjectDoF, SkinnedHandModel, synthetic_hand
from .refine import AdamState, RefineConfig, RefineResult, adam_step, refine
from .scene import EquilibriumCertificate, SceneTrajectory, load_scene, save_scene
from .scenegen import generate_static_grasp

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule", "ContactParams", "annealed_z", "contact_probability",
    "BatchSpec", "EnergyModel", "GradientReport", "ParamVector",
    "evaluate_with_gradient", "finite_difference_gradient",
    "EnergyBreakdown", "EnergyWeights",
    "MetricsReport", "contact_map_from_pose", "inject_finger_noise", "mpjpe",
    "pr_auc", "roc_auc", "score_scene",
    "ForceField", "PhysicsConstants", "VertexForceState", "init_force_field",
    "TriMesh", "SignedDistanceResult", "sample_vertices", "signed_distance_to_mesh",
    "HandDoF", "ObjectDoF", "SkinnedHandModel", "synthetic_hand",
    "AdamState", "RefineConfig", "RefineResult", "adam_step", "refine",
    "EquilibriumCertificate", "SceneTrajectory", "load_scene", "save_scene",
    "generate_static_grasp",
    "__version__",
]
