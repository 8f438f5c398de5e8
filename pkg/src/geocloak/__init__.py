"""geocloak: visual geo-location estimation and geo-privacy evaluation.

A background collection of geo-tagged images is indexed with a
bag-of-visual-words inverted file refined by 64-bit signatures; targets
are located by propagating the coordinates of their best visual match
(after pairwise geometric re-ranking), or by a KD-forest baseline over
BoW histograms. Deterministic image enhancements (filter recipes, smart
crop, tilt-shift) and cloaking metrics quantify how editing practices
hide or reveal photo locations.
"""

from .bnn import BowHistogram, KdForest, bnn_search, bow_histogram, nearest_neighbors
from .engine import BatchResult, GleEngine, GlePrediction, histograms_from_index
from .enhance import (
    CropWindow,
    FILTER_NAMES,
    apply_filter,
    saliency_center,
    smart_crop,
    tilt_shift,
)
from .errors import (
    ConfigurationError,
    DataError,
    DegenerateInputError,
    GeocloakError,
    ImageFormatError,
    IngestionError,
    MalformedHeaderError,
    TruncatedDataError,
    UndefinedMetricError,
)
from .evaluation import (
    CloakReport,
    EvalReport,
    HeatmapGrid,
    PixelRecord,
    cloak_from_sets,
    cloak_metrics,
    filtered_background_experiment,
    format_ratio_percent,
    heatmap_grid,
    percent_correct,
)
from .features import (
    ExtractParams,
    FeatureSet,
    Keypoint,
    SyntheticLayout,
    extract_features,
    load_features,
    save_features,
    synthetic_features,
)
from .geo import EARTH_RADIUS_M, GeoPoint, GridCell, haversine_m, to_cell
from .image import RasterImage, read_image, write_image
from .index import (
    BowIndex,
    ImageRecord,
    RankedMatch,
    brute_force_score,
    build_index,
    load_index,
    query,
    save_index,
)
from .pgm import Correspondence, PgmScore, pgm_score, rerank, tentative_correspondences
from .toponym import TagStats, classify_all, classify_tag, collect_tag_stats, split_targets
from .vocab import (
    VisualVocabulary,
    assign,
    compute_he_medians,
    compute_idf,
    load_vocabulary,
    multi_assign,
    save_vocabulary,
    train_kmeans,
    train_vocabulary,
)

__version__ = "0.1.0"
