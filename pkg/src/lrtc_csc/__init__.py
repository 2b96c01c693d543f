"""Low-rank tensor completion with a convolutional sparse coding prior."""

from .csc import (ConvDictionary, CscParams, FeatureMapStack, cbpdn_gr_solve, csc_denoise,
                  load_dictionary, lowpass_split, reconstruct, save_dictionary,
                  train_dictionary)
from .lrtc import (CompletionResult, LrtcConfig, Observation, PassThrough, complete,
                   init_estimate)
from .harness import ExperimentSpec, generate_mask, run_experiment, sweep
from .metrics import MetricReport, evaluate, psnr_mean, relative_error, ssim_mean
from .prox import SnnWeights, snn_value, soft_threshold, svt_fourier_slices, svt_matrix, tnn_value
from .tensor import (bcirc, bvec, bvfold, fft_mode3, fold, identity_tensor, ifft_mode3,
                     t_product, t_svd, t_transpose, tubal_rank, unfold)

__version__ = "0.1.0"
