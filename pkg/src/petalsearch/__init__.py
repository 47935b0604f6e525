"""Cross-view pose search over petal-structured polar features."""
from .errors import (BoundsError, ConfigError, EmptyInputError, FormatError, PetalSearchError,
                     ShapeError)
from .features import FeatureMap, PetalFeature, normalize, pool_satellite, street_feature
from .geometry import PetalLUT, PetalSpec, build_lut
from .kernels import BACKEND
from .matchmaker import PriorConfig, SimilarityCurve, best_orientation, circular_correlate
from .search import LevelPlan, SearchResult, flat_search, plan_levels, query_count, run_search
from .synthworld import GroundTruth, SceneConfig, make_instance

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BoundsError", "ConfigError", "EmptyInputError", "FeatureMap", "FormatError",
    "GroundTruth", "LevelPlan", "PetalFeature", "PetalLUT", "PetalSearchError", "PetalSpec",
    "PriorConfig", "SceneConfig", "SearchResult", "ShapeError", "SimilarityCurve", "best_orientation",
    "build_lut", "circular_correlate", "flat_search", "make_instance", "normalize", "plan_levels",
    "pool_satellite", "query_count", "run_search", "street_feature",
]
