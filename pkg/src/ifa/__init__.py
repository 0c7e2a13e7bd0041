"""Implicit feature alignment: decode segmentation logits at any coordinate."""

from .grid import FeatureGrid, QueryCoord, nearest_latent, query_grid
from .head import IfaHead, decode, decode_map, make_pyramid
from .posenc import PosEncoder
from .config import RunConfig
from .model import Segmenter

__all__ = ["FeatureGrid", "QueryCoord", "nearest_latent", "query_grid", "IfaHead", "decode",
           "decode_map", "make_pyramid", "PosEncoder", "RunConfig", "Segmenter"]
