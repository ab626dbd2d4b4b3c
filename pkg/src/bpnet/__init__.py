"""PPG-to-ABP waveform translation toolkit.

Submodules: autodiff (tensor core), wavelet (denoising chain), dataset
(episodes, EPBN container, synthesis), network (the U-Net), training
(optimizer, schedules, k-fold driver), evaluation (BHS/AAMI grading),
cli (command-line surface and latency benchmark).
"""

__version__ = "0.1.0"
