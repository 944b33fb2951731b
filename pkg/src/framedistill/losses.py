"""The four training losses and their weighted combinations.

CE is multi-label cross entropy over independent sigmoid outputs. REP is the
squared error between teacher and student video embeddings, REP_I the same
summed over aligned intermediate (block-level) pairs, and PRED a distance
between the two predicted probability vectors: either squared error or
per-class Bernoulli KL (the outputs are independent sigmoids, so categorical
KL would be ill-defined).

Teacher-side quantities must be passed in detached (plain constants); no
gradient ever flows into teacher parameters through a distillation term.
Probabilities are clipped to [eps, 1-eps] with eps = 1e-7 before any log.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .autodiff import Graph, Tensor

EPS = 1e-7

TERMS = ("CE", "REP", "REP_I", "PRED")
DISTANCES = ("sqerr", "kl")
REP_MODES = ("final", "intermediate")

# loss combinations (a)-(e); (a) is the two-stage mimic-then-fine-tune recipe
COMBOS = {
    "a": ("REP",),
    "b": ("REP", "CE"),
    "c": ("PRED",),
    "d": ("PRED", "CE"),
    "e": ("REP", "PRED", "CE"),
}


@dataclass(frozen=True)
class LossSpec:
    terms: tuple[str, ...]
    weights: dict = field(default_factory=dict)
    pred_distance: str = "sqerr"
    rep_mode: str = "final"

    def __post_init__(self):
        if not self.terms:
            raise ValueError("loss spec needs at least one term")
        for t in self.terms:
            if t not in TERMS:
                raise ValueError(f"unknown loss term {t!r}, want one of {TERMS}")
        if self.pred_distance not in DISTANCES:
            raise ValueError(f"unknown pred distance {self.pred_distance!r}")
        if self.rep_mode not in REP_MODES:
            raise ValueError(f"unknown rep mode {self.rep_mode!r}")
        weights = {t: float(self.weights.get(t, 1.0)) for t in self.terms}
        if any(w <= 0 for w in weights.values()):
            raise ValueError(f"term weights must be positive, got {weights}")
        object.__setattr__(self, "weights", weights)

    def weight(self, term: str) -> float:
        return self.weights[term]


def spec_for_combo(combo: str, rep_mode: str = "final", pred_distance: str = "sqerr",
                   weights: dict | None = None) -> LossSpec:
    """LossSpec for combination letter a-e; rep_mode swaps REP for REP_I."""
    if combo not in COMBOS:
        raise ValueError(f"unknown combo {combo!r}, want one of {sorted(COMBOS)}")
    terms = tuple(
        "REP_I" if t == "REP" and rep_mode == "intermediate" else t
        for t in COMBOS[combo]
    )
    return LossSpec(terms=terms, weights=weights or {}, pred_distance=pred_distance,
                    rep_mode=rep_mode)


def _check_same_length(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shapes {a.shape} vs {b.shape} differ")


def loss_ce(g: Graph, y: Tensor, y_hat: Tensor) -> Tensor:
    """Multi-label cross entropy: -sum_i y log p + (1-y) log (1-p)."""
    _check_same_length("loss_ce", y, y_hat)
    p = g.clip(y_hat, EPS, 1.0 - EPS)
    ones = Tensor([1.0])
    pos = g.mul(y, g.log(p))
    neg = g.mul(g.sub(ones, y), g.log(g.sub(ones, p)))
    return g.scale(g.sum(g.add(pos, neg)), -1.0)


def loss_rep(g: Graph, e_teacher: Tensor, e_student: Tensor) -> Tensor:
    """Squared error between final video embeddings (teacher detached)."""
    _check_same_length("loss_rep", e_teacher, e_student)
    return g.squared_error(e_teacher, e_student)


def loss_rep_intermediate(g: Graph, teacher_list: list, student_list: list) -> Tensor:
    """Sum of per-pair squared errors over aligned intermediates."""
    pairs = min(len(teacher_list), len(student_list))
    if pairs == 0:
        raise ValueError("loss_rep_intermediate: no aligned pairs")
    total = None
    for i in range(pairs):
        term = g.squared_error(teacher_list[i], student_list[i])
        total = term if total is None else g.add(total, term)
    return total


def loss_pred(g: Graph, p_teacher: Tensor, p_student: Tensor,
              distance: str = "sqerr") -> Tensor:
    """Distance between class-probability vectors (teacher detached)."""
    _check_same_length("loss_pred", p_teacher, p_student)
    if distance not in DISTANCES:
        raise ValueError(f"unknown pred distance {distance!r}")
    pt = g.clip(p_teacher, EPS, 1.0 - EPS)
    ps = g.clip(p_student, EPS, 1.0 - EPS)
    if distance == "sqerr":
        return g.squared_error(pt, ps)
    ones = Tensor([1.0])
    qt = g.sub(ones, pt)
    qs = g.sub(ones, ps)
    kl = g.add(
        g.mul(pt, g.sub(g.log(pt), g.log(ps))),
        g.mul(qt, g.sub(g.log(qt), g.log(qs))),
    )
    return g.sum(kl)


def combine(g: Graph, spec: LossSpec, computed: dict) -> Tensor:
    """Weighted sum of the computed term tensors listed in the spec."""
    total = None
    for term in spec.terms:
        if term not in computed:
            raise ValueError(f"combine: term {term} required by spec but not computed")
        scaled = g.scale(computed[term], spec.weight(term))
        total = scaled if total is None else g.add(total, scaled)
    return total
