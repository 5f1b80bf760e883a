"""Density-ratio toolkit built on contrastive similarity scores."""

from .embeddings import EmbeddingMatrix, PairedCorpus, load, normalize, raw_norms, save
from .errors import (ContractError, DataError, DensRatioError, FormatError,
                     TrainingDiverged)
from .scoring import ScoreModel, iwl_weight, iwl_weights, ratio_matrix, score, score_matrix
from .divergence import (CorrelationMatrix, MetricVector, MomentSummary,
                         compute_moments, conformity, d_c, d_c_many, d_c_self,
                         d_kl, d_kl_many, d_klr, d_klr_many, d_w, d_w_many,
                         metric_correlations, pearson)
from .bootstrap import BootstrapReport, bootstrap, sample_size_sweep
from .curation import Manifest, compose_filters, rank_and_filter, threshold_filter
from .ngrams import Caption, NGramTable, coverage_curve, decile_groups, tokenize

__version__ = "0.1.0"
