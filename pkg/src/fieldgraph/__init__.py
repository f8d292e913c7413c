"""Superpixel graph pipeline for nutrient stress mapping in field imagery.

The pipeline turns an aerial RGB image into a fixed-size graph: SLIC
superpixels become nodes carrying compact color statistics, edges carry
histogram dissimilarity, and a small graph convolutional network scores
each node for stress. Submodules follow the processing order:

    raster_io -> slic -> featurize -> graph_build -> gcn_core -> train
    -> eval_metrics, with synth providing data and cli the entry point.
"""

from .errors import FieldGraphError

__version__ = "0.1.0"

__all__ = ["FieldGraphError", "__version__"]
