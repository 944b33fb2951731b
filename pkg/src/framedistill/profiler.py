"""Analytic FLOPs model and wall-clock inference timing.

Counting conventions (the formulas below are normative for this artifact):
one multiply-add = 2 FLOPs, one activation evaluation = 1 FLOP. A linear map
from width a to width b therefore costs 2*a*b; biases ride along in the
multiply-add.

Per LSTM step with input d and hidden h:
    gates: 2 * 4h * (d + h);  pointwise: 9h
    (3 sigmoids + 1 tanh on gates = 4h, cell update f*c + i*g = 3h,
     output o * tanh(c) = 2h)

H-RNN over T frames with block size l and cell h (2 stacked layers per
level): T lower steps of step(D, h) + step(h, h), plus ceil(T/l) upper steps
of 2 * step(h, h). Head: 2 * h * m.

NetVLAD with D-dim input, C clusters, hidden width H:
    assignment  2*T*D*C + 5*T*C          (logits + softmax at 5/element)
    aggregation 2*T*D*C + D*C + 3*D*C    (residual sum, center fold, norms)
    fc          2*(D*C)*H + 2*H^2 + 3*H  (projection + context gating)
    head        2*H*m

NeXtVLAD expands frames to lambda*D, splits them into G groups of width
p = lambda*D/G, and shares cluster weights across groups:
    assignment  2*T*D*(lambda*D)            expansion FC
                + 2*T*(lambda*D)*G + T*G    per-group scalar attention
                + 2*T*(lambda*D)*C + 5*T*G*C + T*G*C
                                            grouped cluster logits, softmax,
                                            attention weighting
    aggregation 2*(T*G)*p*C + p*C + 3*p*C
    fc / head   as NetVLAD with p*C inputs

Wall-clock timing runs eval-mode forwards only and reports the median of
three repetitions; no tight bounds are ever asserted on it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .encoders import (EncoderConfig, HRNNConfig, NetVLADConfig, NeXtVLADConfig,
                       forward_scores)
from .sampling import SamplerSpec, sample_indices

STAGES = ("lower-rnn", "upper-rnn", "assignment", "aggregation", "fc", "head")


@dataclass
class FlopsReport:
    total: int
    breakdown: dict
    frames_used: int

    def to_dict(self) -> dict:
        return {"total": self.total, "breakdown": dict(self.breakdown),
                "frames_used": self.frames_used}


def lstm_step_flops(d: int, h: int) -> int:
    return 2 * 4 * h * (d + h) + 9 * h


def count_flops(cfg: EncoderConfig, frames: int) -> FlopsReport:
    """Exact integer FLOPs of one eval-mode forward pass on `frames` frames."""
    if frames < 1:
        raise ValueError(f"frame count must be >= 1, got {frames}")
    t = frames
    m = cfg.num_classes
    breakdown = dict.fromkeys(STAGES, 0)
    if isinstance(cfg, HRNNConfig):
        h, d = cfg.cell, cfg.input_dim
        blocks = -(-t // cfg.frames_per_block)
        breakdown["lower-rnn"] = t * (lstm_step_flops(d, h) + lstm_step_flops(h, h))
        breakdown["upper-rnn"] = blocks * 2 * lstm_step_flops(h, h)
        breakdown["head"] = 2 * h * m
    elif isinstance(cfg, NetVLADConfig):
        d, c, hid = cfg.input_dim, cfg.clusters, cfg.hidden
        breakdown["assignment"] = 2 * t * d * c + 5 * t * c
        breakdown["aggregation"] = 2 * t * d * c + d * c + 3 * d * c
        breakdown["fc"] = 2 * (d * c) * hid + 2 * hid * hid + 3 * hid
        breakdown["head"] = 2 * hid * m
    elif isinstance(cfg, NeXtVLADConfig):
        d, c, hid, grp = cfg.input_dim, cfg.clusters, cfg.hidden, cfg.groups
        width = cfg.expansion * d
        p = cfg.group_width
        breakdown["assignment"] = (
            2 * t * d * width
            + 2 * t * width * grp + t * grp
            + 2 * t * width * c + 5 * t * grp * c + t * grp * c
        )
        breakdown["aggregation"] = 2 * (t * grp) * p * c + p * c + 3 * p * c
        breakdown["fc"] = 2 * (p * c) * hid + 2 * hid * hid + 3 * hid
        breakdown["head"] = 2 * hid * m
    else:
        raise ValueError(f"unknown encoder config {type(cfg).__name__}")
    return FlopsReport(total=sum(breakdown.values()), breakdown=breakdown,
                       frames_used=t)


def time_inference(bundle, records, sampler: SamplerSpec | None = None,
                   repeats: int = 3) -> dict:
    """Median wall time of eval-mode forward passes over the whole dataset."""
    if not records:
        raise ValueError("empty dataset")
    cfg = bundle.encoder_cfg
    frame_sets = []
    for rec in records:
        frames = rec.frames
        if sampler is not None:
            frames = frames[sample_indices(sampler, rec.num_frames)]
        frame_sets.append(frames)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        for frames in frame_sets:
            forward_scores(cfg, bundle.params, frames)
        times.append(time.perf_counter() - start)
    times.sort()
    median = times[len(times) // 2]
    return {"wall_seconds": median, "videos_per_second": len(records) / median}
