"""Zero-shot classification with conditional denoisers.

Scores every candidate class by its weighted denoising error on noised copies
of the input and predicts the class with the smallest expected error.
"""
__version__ = "0.1.0"

from .diffusion import (COSINE, Condition, GaussianDenoiser, GaussianWorld, NoisedObservation, NoiseSchedule,
                        ScoreModel, bayes_classify, generate_world_sample, make_clustered_world, make_world,
                        posterior_mean_denoiser, sample_forward, schedule_eval, squared_error_score)
from .weighting import WeightingSpec, learn_weights, weight
from .stats import PairedAccumulator, paired_ttest_pvalue, student_t_sf
from .classifier import (ClassifierConfig, Prediction, ScoresLedger, classify, classify_dataset,
                         classify_naive, classify_pruned, classify_shared, efficiency_curve)

__all__ = [
    "COSINE", "Condition", "GaussianDenoiser", "GaussianWorld", "NoisedObservation", "NoiseSchedule",
    "ScoreModel", "bayes_classify", "generate_world_sample", "make_clustered_world", "make_world",
    "posterior_mean_denoiser", "sample_forward", "schedule_eval", "squared_error_score",
    "WeightingSpec", "learn_weights", "weight", "PairedAccumulator", "paired_ttest_pvalue", "student_t_sf",
    "ClassifierConfig", "Prediction", "ScoresLedger", "classify", "classify_dataset", "classify_naive",
    "classify_pruned", "classify_shared", "efficiency_curve",
]
