"""Stabilizing a fixed neural-to-EMG decoder against recording drift.

A joint autoencoder + LSTM interface decodes muscle activity from
multichannel firing rates, and three domain-adaptation methods (CCA over
trial-averaged latent trajectories, Gaussian-KL latent matching, and
adversarial residual alignment) keep the frozen interface usable as the
recorded population drifts from day to day.
"""

from .adan import (
    AdanConfig,
    AdversarialResidualAligner,
    TranslateScaleAligner,
    adan_apply,
    adan_train,
    data_efficiency_sweep,
    residual_l1,
    translate_scale_fit,
    wasserstein_lb,
)
from .bench import BenchmarkTable, VafReport, crossval, run_benchmark, vaf
from .cca import CcaAligner, CcaTransform, cca_apply, cca_fit, trial_average
from .interface import (
    DirectEmgPredictor,
    InterfaceParams,
    LatentSeries,
    NeuralEmgInterface,
    TrainConfig,
    decode,
    encode,
    joint_loss,
    load_interface,
    predict_emg,
    save_interface,
    train_direct,
    train_joint,
    train_sequential,
    vae_regularizer,
)
from .kldm import (
    GaussianKlAligner,
    GaussianSummary,
    KlTrainConfig,
    gaussian_fit,
    kl_gaussian,
    kldm_apply,
    kldm_train,
)
from .numerics import GradCheckReport, RngStream, adam_step, grad_check, qr_decompose, svd
from .signal import (
    EmgSeries,
    RateSeries,
    SpikeSession,
    bin_spikes,
    emg_envelope,
    load_session,
    preprocess,
    save_session,
    smooth_rates,
)
from .synth import DriftSpec, GeneratorSpec, apply_drift, drift_for_day, generate_day0

__version__ = "0.1.0"
