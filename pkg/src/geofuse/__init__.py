"""Geospatial attention for fusing ground-level panoramas with overhead imagery.

Subpackages and modules:

* :mod:`geofuse.autodiff` -- numpy reverse-mode autodiff, Adam, checkpoints
* :mod:`geofuse.geo` -- haversine/bearing geodesy and panorama ray geometry
* :mod:`geofuse.attention` -- the geospatial attention net and feature reduction
* :mod:`geofuse.fusion` -- softmax fusion of panoramas into a dense grid
* :mod:`geofuse.model` -- encoders, fusion blocks, decoder, training
* :mod:`geofuse.synthdata` -- procedural city scenes
* :mod:`geofuse.metrics` -- mIOU / accuracy / RMSE with unknown masking
* :mod:`geofuse.cli` -- the ``geofuse`` command line
"""
__version__ = "0.1.0"
