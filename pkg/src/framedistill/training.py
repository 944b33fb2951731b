"""Optimizer, schedule, and the four training procedures.

* teacher skyline: full-frame model trained with cross entropy
* baseline: identical recipe but every video is frame-subsampled first
* serial distillation: a frozen, pre-trained teacher produces targets for a
  student that reads k equally spaced frames; combo (a) runs two stages
  (mimic the representation, then fine-tune with CE using the teacher's
  classifier), combos (b)-(e) run a single stage
* parallel distillation: teacher and student are updated jointly each step;
  the teacher optimizes only cross entropy and the student distills from the
  teacher's current parameters

Every procedure is a pure function of (datasets, configs, seed): shuffles,
parameter inits and dropout masks all derive from the run seed through the
package PRNG, so re-running yields bit-identical checkpoints. The classifier
head is shared: serial students start from a copy of the teacher's head,
parallel students share the very tensors. Distillation targets are always
detached, so no gradient ever reaches teacher parameters, and the head
receives gradients only from the CE term (the PRED path uses a per-step
frozen view of the head). The returned model is the epoch snapshot with the
best validation GAP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Tensor, backward
from .encoders import (EncoderConfig, HRNNConfig, check_width_parity, classify,
                       embedding_width, encode, init_head, init_params,
                       load_checkpoint, save_checkpoint, student_encoder_config)
from .losses import LossSpec, loss_ce, loss_pred, loss_rep, loss_rep_intermediate, spec_for_combo
from .metrics import evaluate
from .rng import SplitMix64, derive
from .sampling import SamplerSpec, sample_indices


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    decay: float = 0.95
    batch_size: int = 32
    epochs: int = 5
    l2: float = 1e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not (0 < self.decay <= 1):
            raise ValueError("decay must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Exponential epoch-level schedule lr0 * decay^epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.decay**epoch


def l2_gradient(data: np.ndarray, l2: float) -> np.ndarray:
    """Gradient of the penalty l2 * ||theta||^2, i.e. 2 * l2 * theta."""
    return 2.0 * l2 * data


class Adam:
    """Adam over a fixed named parameter set; L2 is added to raw gradients."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.t = 0

    def step(self, lr: float, l2: float = 0.0) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            if l2:
                grad = grad + l2_gradient(p.data, l2)
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * grad
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * grad * grad
            p.data -= lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + cfg.adam_eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class ModelBundle:
    """Encoder + head parameters with the training history that produced them."""

    encoder_cfg: EncoderConfig
    params: dict
    history: list = field(default_factory=list)
    num_updates: int = 0

    def save(self, path) -> None:
        save_checkpoint(path, self.encoder_cfg, self.params, self.history,
                        self.num_updates)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        cfg, params, history, num_updates = load_checkpoint(path)
        return cls(cfg, params, history, num_updates)


def label_vector(record, num_classes: int) -> np.ndarray:
    y = np.zeros(num_classes)
    for c in record.labels:
        if c >= num_classes:
            raise ValueError(f"record {record.id}: label {c} >= num_classes {num_classes}")
        y[c] = 1.0
    return y


def _snapshot(params: dict) -> dict:
    return {name: p.data.copy() for name, p in params.items()}


def _restore(params: dict, snap: dict) -> None:
    for name, p in params.items():
        p.data = snap[name].copy()


def _batches(n: int, batch_size: int, perm) -> list:
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _sampled_frames(records, sampler: SamplerSpec | None) -> list:
    """Per-record frame matrices after sampling; random kind gets a per-video
    derived seed so different videos pick different frames, deterministically."""
    if sampler is None:
        return [rec.frames for rec in records]
    out = []
    for i, rec in enumerate(records):
        spec = sampler
        if sampler.kind == "random":
            spec = SamplerSpec(sampler.kind, sampler.k, derive(sampler.seed, "video", i))
        out.append(rec.frames[sample_indices(spec, rec.num_frames)])
    return out


def _check_finite(loss: Tensor, epoch: int, step: int) -> None:
    if not np.isfinite(loss.data[0]):
        raise RuntimeError(
            f"training diverged: non-finite loss at epoch {epoch}, step {step}"
        )


def train_teacher(train_recs, val_recs, enc_cfg: EncoderConfig,
                  cfg: TrainConfig) -> ModelBundle:
    """Full-frame model minimizing mean CE + l2 penalty; best-val snapshot."""
    return _train_single(train_recs, val_recs, enc_cfg, cfg, sampler=None,
                         role="teacher")


def train_baseline(train_recs, val_recs, enc_cfg: EncoderConfig, cfg: TrainConfig,
                   sampler: SamplerSpec) -> ModelBundle:
    """As train_teacher, but every video is subsampled before encoding."""
    return _train_single(train_recs, val_recs, enc_cfg, cfg, sampler=sampler,
                         role="student")


def _train_single(train_recs, val_recs, enc_cfg, cfg, sampler, role):
    if not train_recs or not val_recs:
        raise ValueError("train and validation sets must be non-empty")
    params = init_params(enc_cfg, derive(cfg.seed, "enc"))
    params.update(init_head(embedding_width(enc_cfg), enc_cfg.num_classes,
                            derive(cfg.seed, "head")))
    frames = _sampled_frames(train_recs, sampler)
    targets = [label_vector(r, enc_cfg.num_classes) for r in train_recs]
    opt = Adam(params, cfg)
    history = []
    best_gap, best_snap = -1.0, None
    n = len(train_recs)
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        perm = SplitMix64(derive(cfg.seed, "shuffle", epoch)).permutation(n)
        epoch_losses = []
        for step, idxs in enumerate(_batches(n, cfg.batch_size, perm)):
            g = Graph(seed=derive(cfg.seed, "step", epoch, step))
            total = None
            for i in idxs:
                emb = encode(g, Tensor(frames[i]), params, enc_cfg, train=True)
                probs = classify(g, emb, params)
                li = loss_ce(g, Tensor(targets[i]), probs)
                total = li if total is None else g.add(total, li)
            loss = g.scale(total, 1.0 / len(idxs))
            _check_finite(loss, epoch, step)
            backward(g, loss)
            opt.step(lr, cfg.l2)
            opt.zero_grad()
            epoch_losses.append(loss.data[0])
        view = ModelBundle(enc_cfg, params)
        val_gap = evaluate(view, val_recs, sampler=sampler).gap
        history.append({"epoch": epoch, "loss": float(np.mean(epoch_losses)),
                        "val_gap": val_gap, "role": role})
        if val_gap > best_gap:
            best_gap, best_snap = val_gap, _snapshot(params)
    _restore(params, best_snap)
    return ModelBundle(enc_cfg, params, history, num_updates=opt.t)


class _Targets:
    """Detached teacher outputs for one dataset (frozen teacher, eval mode)."""

    __slots__ = ("emb", "inter", "probs")

    def __init__(self, emb, inter, probs):
        self.emb = emb
        self.inter = inter
        self.probs = probs


def _teacher_targets(teacher_cfg, teacher_params, records, need_inter: bool,
                     need_probs: bool) -> _Targets:
    embs, inters, probs = [], [], []
    for rec in records:
        g = Graph()
        emb = encode(g, Tensor(rec.frames), teacher_params, teacher_cfg, train=False)
        embs.append(emb.e.data.copy())
        if need_inter:
            inters.append([t.data.copy() for t in emb.intermediates])
        if need_probs:
            probs.append(classify(g, emb, teacher_params).data.copy())
    return _Targets(embs, inters if need_inter else None,
                    probs if need_probs else None)


def _student_batch_loss(g, idxs, frames, labels, targets, s_params, s_cfg, spec,
                        head_for_pred):
    """Mean combined loss over one batch of student videos."""
    total = None
    for i in idxs:
        emb = encode(g, Tensor(frames[i]), s_params, s_cfg, train=True)
        computed = {}
        if "REP" in spec.terms:
            computed["REP"] = loss_rep(g, Tensor(targets.emb[i]), emb.e)
        if "REP_I" in spec.terms:
            consts = [Tensor(v) for v in targets.inter[i]]
            computed["REP_I"] = loss_rep_intermediate(g, consts, emb.intermediates)
        if "PRED" in spec.terms:
            logits = g.add(g.matmul(emb.e, head_for_pred[0]), head_for_pred[1])
            p_student = g.sigmoid(logits)
            computed["PRED"] = loss_pred(g, Tensor(targets.probs[i]), p_student,
                                         spec.pred_distance)
        if "CE" in spec.terms:
            probs = classify(g, emb, s_params)
            computed["CE"] = loss_ce(g, Tensor(labels[i]), probs)
        video_loss = None
        for term in spec.terms:
            scaled = g.scale(computed[term], spec.weight(term))
            video_loss = scaled if video_loss is None else g.add(video_loss, scaled)
        total = video_loss if total is None else g.add(total, video_loss)
    return g.scale(total, 1.0 / len(idxs))


def _reference_frame_count(records) -> int:
    return int(np.median([rec.num_frames for rec in records]))


def train_student_serial(teacher: ModelBundle, train_recs, val_recs, combo: str,
                         k: int, cfg: TrainConfig, rep_mode: str = "final",
                         pred_distance: str = "sqerr", weights: dict | None = None,
                         student_cfg: EncoderConfig | None = None) -> ModelBundle:
    """Distill a frozen teacher into a uniform-k student (combos a-e)."""
    if not train_recs or not val_recs:
        raise ValueError("train and validation sets must be non-empty")
    t_cfg = teacher.encoder_cfg
    if student_cfg is None:
        student_cfg = student_encoder_config(t_cfg, k, _reference_frame_count(train_recs))
    check_width_parity(t_cfg, student_cfg)
    spec = spec_for_combo(combo, rep_mode, pred_distance, weights)
    if "REP_I" in spec.terms and not isinstance(student_cfg, HRNNConfig):
        raise ValueError("intermediate matching needs an encoder with intermediates")

    s_params = init_params(student_cfg, derive(cfg.seed, "student"))
    s_params["head_w"] = Tensor(teacher.params["head_w"].data.copy(), requires_grad=True)
    s_params["head_b"] = Tensor(teacher.params["head_b"].data.copy(), requires_grad=True)

    sampler = SamplerSpec("uniform", k)
    frames = _sampled_frames(train_recs, sampler)
    labels = [label_vector(r, student_cfg.num_classes) for r in train_recs]
    need_inter = "REP_I" in spec.terms
    need_probs = "PRED" in spec.terms
    targets = _teacher_targets(t_cfg, teacher.params, train_recs, need_inter, need_probs)

    if combo == "a":
        stages = [(spec, False), (LossSpec(terms=("CE",)), True)]
    else:
        stages = [(spec, "CE" in spec.terms)]

    history = []
    best_gap, best_snap = -1.0, None
    n = len(train_recs)
    num_updates = 0
    global_epoch = 0
    for stage_spec, with_head in stages:
        opt_params = {k_: v for k_, v in s_params.items()
                      if with_head or not k_.startswith("head_")}
        opt = Adam(opt_params, cfg)
        for epoch in range(cfg.epochs):
            lr = lr_at(cfg, epoch)
            perm = SplitMix64(derive(cfg.seed, "shuffle", global_epoch)).permutation(n)
            epoch_losses = []
            for step, idxs in enumerate(_batches(n, cfg.batch_size, perm)):
                g = Graph(seed=derive(cfg.seed, "step", global_epoch, step))
                head_for_pred = (Tensor(s_params["head_w"].data.copy()),
                                 Tensor(s_params["head_b"].data.copy()))
                loss = _student_batch_loss(g, idxs, frames, labels, targets,
                                           s_params, student_cfg, stage_spec,
                                           head_for_pred)
                _check_finite(loss, global_epoch, step)
                backward(g, loss)
                opt.step(lr, cfg.l2)
                opt.zero_grad()
                epoch_losses.append(loss.data[0])
            view = ModelBundle(student_cfg, s_params)
            val_gap = evaluate(view, val_recs, sampler=sampler).gap
            history.append({"epoch": global_epoch, "loss": float(np.mean(epoch_losses)),
                            "val_gap": val_gap, "role": "student"})
            if val_gap > best_gap:
                best_gap, best_snap = val_gap, _snapshot(s_params)
            global_epoch += 1
        num_updates += opt.t
    _restore(s_params, best_snap)
    return ModelBundle(student_cfg, s_params, history, num_updates=num_updates)


def train_parallel(train_recs, val_recs, enc_cfg_t: EncoderConfig,
                   enc_cfg_s: EncoderConfig, combo: str, k: int, cfg: TrainConfig,
                   rep_mode: str = "final", pred_distance: str = "sqerr",
                   weights: dict | None = None):
    """Joint training: teacher steps on CE, student distills from the current
    teacher. Returns (teacher bundle, student bundle). Combo (a) degenerates
    to a single REP-only stage here (no staging in parallel mode)."""
    if not train_recs or not val_recs:
        raise ValueError("train and validation sets must be non-empty")
    check_width_parity(enc_cfg_t, enc_cfg_s)
    spec = spec_for_combo(combo, rep_mode, pred_distance, weights)
    if "REP_I" in spec.terms and not isinstance(enc_cfg_s, HRNNConfig):
        raise ValueError("intermediate matching needs an encoder with intermediates")

    t_params = init_params(enc_cfg_t, derive(cfg.seed, "teacher"))
    head = init_head(embedding_width(enc_cfg_t), enc_cfg_t.num_classes,
                     derive(cfg.seed, "head"))
    t_params.update(head)
    s_params = init_params(enc_cfg_s, derive(cfg.seed, "student"))
    s_params.update(head)  # same tensor objects: the head is shared

    sampler = SamplerSpec("uniform", k)
    s_frames = _sampled_frames(train_recs, sampler)
    labels = [label_vector(r, enc_cfg_t.num_classes) for r in train_recs]
    need_inter = "REP_I" in spec.terms
    need_probs = "PRED" in spec.terms

    t_opt = Adam(t_params, cfg)
    s_opt_params = {k_: v for k_, v in s_params.items()
                    if "CE" in spec.terms or not k_.startswith("head_")}
    s_opt = Adam(s_opt_params, cfg)

    history = []
    best_t, best_t_snap = -1.0, None
    best_s, best_s_snap = -1.0, None
    n = len(train_recs)
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        perm = SplitMix64(derive(cfg.seed, "shuffle", epoch)).permutation(n)
        t_losses, s_losses = [], []
        for step, idxs in enumerate(_batches(n, cfg.batch_size, perm)):
            # teacher update on CE over full frames
            g = Graph(seed=derive(cfg.seed, "tstep", epoch, step))
            total = None
            for i in idxs:
                emb = encode(g, Tensor(train_recs[i].frames), t_params, enc_cfg_t,
                             train=True)
                probs = classify(g, emb, t_params)
                li = loss_ce(g, Tensor(labels[i]), probs)
                total = li if total is None else g.add(total, li)
            t_loss = g.scale(total, 1.0 / len(idxs))
            _check_finite(t_loss, epoch, step)
            backward(g, t_loss)
            t_opt.step(lr, cfg.l2)
            t_opt.zero_grad()
            t_losses.append(t_loss.data[0])

            # student update distilling from the teacher's current parameters
            batch_recs = [train_recs[i] for i in idxs]
            targets = _teacher_targets(enc_cfg_t, t_params, batch_recs,
                                       need_inter, need_probs)
            local = _Targets(
                {i: targets.emb[j] for j, i in enumerate(idxs)},
                {i: targets.inter[j] for j, i in enumerate(idxs)} if need_inter else None,
                {i: targets.probs[j] for j, i in enumerate(idxs)} if need_probs else None,
            )
            g = Graph(seed=derive(cfg.seed, "sstep", epoch, step))
            head_for_pred = (Tensor(s_params["head_w"].data.copy()),
                             Tensor(s_params["head_b"].data.copy()))
            s_loss = _student_batch_loss(g, idxs, s_frames, labels, local, s_params,
                                         enc_cfg_s, spec, head_for_pred)
            _check_finite(s_loss, epoch, step)
            backward(g, s_loss)
            s_opt.step(lr, cfg.l2)
            s_opt.zero_grad()
            s_losses.append(s_loss.data[0])
        t_gap = evaluate(ModelBundle(enc_cfg_t, t_params), val_recs).gap
        s_gap = evaluate(ModelBundle(enc_cfg_s, s_params), val_recs, sampler=sampler).gap
        history.append({"epoch": epoch, "loss": float(np.mean(t_losses)),
                        "val_gap": t_gap, "role": "teacher"})
        history.append({"epoch": epoch, "loss": float(np.mean(s_losses)),
                        "val_gap": s_gap, "role": "student"})
        if t_gap > best_t:
            best_t, best_t_snap = t_gap, _snapshot(t_params)
        if s_gap > best_s:
            best_s, best_s_snap = s_gap, _snapshot(s_params)
    t_final = {name: Tensor(best_t_snap[name], requires_grad=True) for name in t_params}
    s_final = {name: Tensor(best_s_snap[name], requires_grad=True) for name in s_params}
    t_hist = [h for h in history if h["role"] == "teacher"]
    s_hist = [h for h in history if h["role"] == "student"]
    return (
        ModelBundle(enc_cfg_t, t_final, t_hist, num_updates=t_opt.t),
        ModelBundle(enc_cfg_s, s_final, s_hist, num_updates=s_opt.t),
    )
