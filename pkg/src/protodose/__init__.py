"""Proton depth-dose surrogates with uncertainty quantification.

Modules:
    phantom      materials, voxel grids, slab geometries, beams, input sampling
    analytic1d   closed-form 1-D Bragg curves from the range power law
    mctransport  condensed-history Monte Carlo dose on 3-D voxel grids
    nn           from-scratch dropout MLP with AdamW training
    uq           ensemble statistics, variance decomposition, calibration
    datasets     dataset generation, persistence, splitting
    cli          experiment runner and report writer
"""

__version__ = "0.1.0"
