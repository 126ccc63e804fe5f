"""Location-aware feature selection decoding for rotated text boxes."""

__version__ = "0.1.0"

from .decoder import Candidate, DecodeParams, Mode, decode, extract_candidates, group_candidates, lafs_merge
from .geometry import BoxComponents, Point, RotatedBox, box_from_components, quad_iou, rotate_point
from .maps import DenseMap, generate_conf_map, generate_geo_map, generate_score_map, read_map, write_map

__all__ = [
    "BoxComponents",
    "Candidate",
    "DecodeParams",
    "DenseMap",
    "Mode",
    "Point",
    "RotatedBox",
    "box_from_components",
    "decode",
    "extract_candidates",
    "generate_conf_map",
    "generate_geo_map",
    "generate_score_map",
    "group_candidates",
    "lafs_merge",
    "quad_iou",
    "read_map",
    "rotate_point",
    "write_map",
]
