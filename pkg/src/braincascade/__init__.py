"""Multi-scale sliding-window fetal brain extraction.

Submodules: volume (grids and geometry), io_nifti (file I/O), morphology
(mask algebra), windowing (sliding-window planning and accumulation),
predictor (oracle / noisy-oracle / external backends), synth (training-pair
generation), cascade (localization + refinement pipeline), metrics, cli.
"""

__version__ = "0.1.0"
