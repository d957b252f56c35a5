"""Learned mesh deformers and their shared feature extraction."""

from .features import GlobalExtractor, collate, prepare_sample, sample_grid
from .gat import closed_ring, gnn_block
from .model import (DEFAULT_CONFIG, KINDS, DeformerModel, clip_baseline_deform, clip_to_domain, extract_global,
                    gat_deform, spline_deform)
from .spline import rq_spline, rq_spline_inverse, spline_knots

__all__ = ["DeformerModel", "KINDS", "DEFAULT_CONFIG", "clip_to_domain", "GlobalExtractor", "sample_grid",
           "prepare_sample", "collate", "rq_spline", "rq_spline_inverse", "spline_knots", "gnn_block",
           "closed_ring", "extract_global", "spline_deform", "gat_deform", "clip_baseline_deform"]
