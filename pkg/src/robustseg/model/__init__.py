"""The promptable segmenter, its teacher checkpoints and the robust student path."""

from .robust import AMFG, AOTG, VARIANTS, Fusion, RobustPath, StudentOutput, Variant, fourier_suppress, init_from_teacher
from .sam import SamMini, predict_mask, to_nchw
from .teacher import TeacherConfig, load_teacher, pretrain_teacher, save_teacher, teacher_hash

__all__ = [
    "AMFG",
    "AOTG",
    "Fusion",
    "RobustPath",
    "SamMini",
    "StudentOutput",
    "TeacherConfig",
    "VARIANTS",
    "Variant",
    "fourier_suppress",
    "init_from_teacher",
    "load_teacher",
    "predict_mask",
    "pretrain_teacher",
    "save_teacher",
    "teacher_hash",
    "to_nchw",
]
