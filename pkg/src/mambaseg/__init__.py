"""mambaseg: desk-scale segmentation training toolkit.

State-space (Mamba-style) segmentation blocks, an uncertainty-weighted
composite loss with learnable per-component variances, and sharpness-aware
minimization, all on a self-contained float64 autodiff engine so every
gradient is auditable against finite differences.
"""

__version__ = "0.1.0"
