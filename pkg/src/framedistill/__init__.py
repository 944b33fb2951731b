"""Teacher-student distillation for video classifiers that read fewer frames.

A full-view teacher encodes every frame of a video; a cheap student encodes
only k equally spaced frames and is trained to match the teacher's video
representation and/or predicted class probabilities. The package contains a
small reverse-mode autodiff core, three encoders (hierarchical LSTM, NetVLAD,
NeXtVLAD), the distillation losses and training regimes, ranked multi-label
metrics (GAP / mAP), an analytic FLOPs model, and a CLI that wires them into
reproducible experiments on synthetic data.
"""

__version__ = "0.1.0"
