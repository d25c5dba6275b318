"""Soundscape impression prediction from 10-second recordings and location.

The pipeline: acoustic features (A-weighted Leq + octave-band levels) and
aerial-image bottleneck features feed a sound-source predictor, whose outputs
join the raw features as inputs to separate pleasantness and eventfulness
regressors.  Modules are usable standalone; the CLI wires them into
reproducible runs.
"""

__version__ = "0.1.0"

from .impressions import (  # noqa: F401
    AttributeScores,
    ImpressionPair,
    Scale,
    impressions_from_attributes,
    normalization_factor,
)
from .data import (  # noqa: F401
    DatasetManifest,
    ManifestEntry,
    NoiseRule,
    Recording,
    SoundSourceScores,
    cleanse_noise_only,
    load_manifest,
    train_test_split,
)
from .acoustic import AcousticFeature, Waveform, extract_feature, load_audio  # noqa: F401
from .embedding import (  # noqa: F401
    AutoencoderConfig,
    AutoencoderModel,
    BottleneckFeature,
    RawEmbedding,
    baseline_embed,
    encode,
    ingest_embeddings,
    train_autoencoder,
)
from .mlp import MLPConfig, MLPModel, check_gradients, fit, predict  # noqa: F401
from .selection import SearchSpace, SearchResult, kfold_cv, r2, random_search, tpe_search  # noqa: F401
