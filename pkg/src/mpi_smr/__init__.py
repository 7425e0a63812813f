"""System-matrix recovery for magnetic particle imaging.

Subpackages and modules:

- :mod:`mpi_smr.volume`: complex volumes, system matrices, measurements
- :mod:`mpi_smr.codec`: phase-to-hue RGB encoding
- :mod:`mpi_smr.sampling`: regular and Poisson-disc patterns, trilinear baseline
- :mod:`mpi_smr.nn`: minimal reverse-mode autodiff with 3D convolutions
- :mod:`mpi_smr.smrnet`: residual-in-residual dense super-resolution network
- :mod:`mpi_smr.cs`: DCT-sparse compressed sensing (split Bregman)
- :mod:`mpi_smr.recon`: regularised Kaczmarz image reconstruction
- :mod:`mpi_smr.metrics`: NRMSE / PSNR / SSIM and report tables
- :mod:`mpi_smr.simgen`: synthetic scanner, phantoms and measurements
- :mod:`mpi_smr.estimators`: scikit-learn style wrappers
- :mod:`mpi_smr.pipeline` and :mod:`mpi_smr.cli`: experiment orchestration
"""

__version__ = "0.1.0"
