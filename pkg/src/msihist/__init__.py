"""msihist: synthesize stained-histology images from mass spectrometry imaging.

Subpackages and modules:

- spectra: MSI data model, container I/O, rebinning, peak picking, ion images
- reduce: principal-component reduction of peak stacks to 3-channel images
- imagereg: padding, resizing, landmark affine registration, patching
- metrics: mutual information and SSIM between image pairs
- nn: self-contained autodiff engine, U-Net, PatchGAN, Adam, checkpoints
- pipeline: configuration, synthetic data, training loops, evaluation, CLI
"""

__version__ = "0.1.0"
