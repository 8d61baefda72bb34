"""Compact CNN weights for image-retrieval descriptors: quantization, entropy coding,
pruning, weight tying and nested invariance pooling."""
from .analyze import Histogram, LaplacianFit, empirical_entropy, fit_laplacian, layer_stats
from .coding import Bitstream, HuffmanTable, build_huffman, decode_fixed, decode_huffman, encode_fixed, encode_huffman
from .errors import (ConfigError, CorruptionError, DegenerateDistributionError, FormatError, ManifestError,
                     NNCompressError, PlanError, ShapeError)
from .model import (Kind, Layer, Network, Role, Tensor, deserialize_model, load_model, param_accounting, save_model,
                    serialize_model)
from .netforward import (Descriptor, Drift, Group, Moment, NipConfig, Stage, descriptor, descriptor_drift,
                         extract_transformed_stack, forward, nip_pool, synthetic_image)
from .pipeline import (CompressedModel, CompressionConfig, SizeBreakdown, compress, decompress, decompress_tied,
                       load_compressed, save_compressed, size_report)
from .quantize import (EXEMPT, QuantizationSpec, Scalar, ScalarQuantizer, Vector, VectorQuantizer, quantize_network,
                       train_lbg, train_lloyd_max)
from .retrieval import RetrievalRun, average_precision, mean_average_precision, mean_recall_at_4, recall_at_4
from .transform import TieGroup, TiedNetwork, TyingPlan, prune_at, shared_param_count, tie_blocks, untie

__version__ = "0.1.0"
