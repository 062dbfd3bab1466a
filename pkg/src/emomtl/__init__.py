"""Joint discrete/continuous speech emotion models.

Five architecture variants (continuous and discrete baselines, multi-task,
and the two hierarchical decoders), CCC and cross-entropy objectives with
label-presence masking, self-attentive pooling, Adam with warmup/plateau
schedules, synthetic circumplex corpora, and mixed-corpus training.
"""

from .estimator import SpeechEmotionRecognizer
from .models import VARIANTS, ModelDims, build, load_model, save_model
from .numerics import Rng, precision, set_dtype
from .trainer import TrainConfig, train

__all__ = [
    "SpeechEmotionRecognizer", "VARIANTS", "ModelDims", "build",
    "load_model", "save_model", "Rng", "precision", "set_dtype",
    "TrainConfig", "train",
]

__version__ = "0.1.0"
