"""Blind gain/phase calibration of uniform linear arrays from one-bit data."""

from .detect import hermitian_eigenvalues, sorte
from .errors import (CalibrationError, ConfigError, DerivativeSingularityError,
                     InsufficientSupportError, ModelDomainError, NotPositiveDefiniteError)
from .experiment import ExperimentConfig, TrialRecord, calibrate, parse_config, run_mc, run_trial
from .kldfit import (FsaOptions, FsaReport, Termination, covariance_derivatives,
                     extract_estimates, fim, fsa_solve, kld, score)
from .lsinit import LsEstimate, build_theta_ls, clean_covariance_ls, gain_ls, phase_ls
from .model import (ArrayGeometry, ArrayScene, CalibrationOffsets, arcsine_law,
                    clean_covariance, full_covariance, model_covariance_from_theta,
                    normalize_covariance, normalize_scene, pack_theta, steering_matrix,
                    true_theta, unpack_theta)
from .simulate import (SnapshotBatch, corrected_correlation, draw_snapshots, make_rng,
                       quantize, quantize_batch, quantized_sample_covariance,
                       sample_covariance)

__version__ = "0.1.0"
