"""Compact affinity-preserving latent spaces for token embeddings.

Learns a low-dimensional space whose token affinity eigenstructure mirrors
that of a source embedding space, decodes it back into a target embedding
space, and exposes interpolation / analogy as vector algebra on the
learned coordinates.
"""

__version__ = "0.1.0"

from .embedding_io import (FeatureNormStats, FormatError, MoodSpaceModel,
                           TokenEmbeddingSet, load_model, read_embeddings,
                           save_model, write_embeddings)
from .intrinsic_dim import DimEstimate, estimate_dim
from .losses import (LossBreakdown, curvature_loss, recon_loss, repulsion_loss,
                     spectral_loss, total_loss, variance_loss)
from .metrics import UniformityReport, export_eigvec_grids, uniformity
from .mlp import AdamState, MlpParams, adam_init, adam_step, mlp_backward, mlp_forward, mlp_init
from .pathops import (ImagePathResult, LiftedPath, analogy, connect,
                      decode_along_path, image_path, segmented_connect)
from .spectral import (AffinityMatrix, SpectralEmbedding, TokenClusterMap, fps,
                       match_clusters, median_bandwidth, projector, rbf_affinity,
                       spectral_cluster, top_k_eigs)
from .trainer import TrainConfig, decode, decode_displacement, encode, fit, write_loss_csv

__all__ = [name for name in dir() if not name.startswith("_")]
