"""spherecam: coded angular responses for lensless spherical imagers.

Subpackages cover the full pipeline: spherical harmonic transforms
(:mod:`spherecam.sphharm`), binary annular mask design
(:mod:`spherecam.maskdesign`), isotropic spherical convolution
(:mod:`spherecam.convolution`), sensor-accurate measurement simulation
(:mod:`spherecam.forwardsim`), spectral and iterative reconstruction
(:mod:`spherecam.recon`) and scene raster I/O (:mod:`spherecam.sceneio`).
The ``spherecam`` console script (:mod:`spherecam.cli`) drives the same
pipeline from flat key=value config files.
"""

__version__ = "0.1.0"
