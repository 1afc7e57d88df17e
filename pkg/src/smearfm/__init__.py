"""Fundamental-matrix estimation from direction-ambiguous motion-blur smears."""
from .epipolar import (
    TimeDirection,
    endpoints,
    epipolar_line,
    f_distance,
    normalize_rank2,
    sampson_error,
    serr_min,
)
from .errors import *  # noqa: F401,F403
from .evaluation import FmEvalResult, epe_s_summary, field_sparsification, fm_eval
from .robust import EstimationReport, RansacConfig, classify_motion, estimate_f, select_top_beta
from .smear import (
    SmearField,
    cross_check,
    decode_double_angle,
    encode_double_angle,
    epe_s,
    loss_gaussian_nll,
    loss_masked,
    sparsification_curve,
)
from .solver import ambiguous_objective, seven_point_classical, sign_enumeration_oracle, solve_ambiguous_7pt
from .synth import Label, SceneConfig, SyntheticScene, f_from_poses, generate_scene, make_flow_pair

__version__ = "0.1.0"
