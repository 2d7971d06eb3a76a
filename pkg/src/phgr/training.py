"""Joint cross-entropy + contrastive ranking training with early stopping."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .graphs import DataError, build_global_graph
from .model import ModelConfig, forward_batch, global_item_points, init_params, make_batch, to_tensors

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


class NumericalError(RuntimeError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    omega: float = 0.1
    margin: float = 0.1
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    negatives_per_positive: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("learning_rate >= 0, batch_size >= 1 and patience >= 1 required")
        if self.omega < 0 or self.margin < 0 or self.max_epochs < 0:
            raise ValueError("omega, margin and max_epochs must be nonnegative")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be at least 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LossBreakdown:
    ce: float
    cr: float
    total: float


# ---------------------------------------------------------------- losses

def ce_loss(probabilities, target):
    """Binary cross-entropy summed over the one-hot target vector.

    Works on a single probability vector (``target`` an int) or a batch
    (``(B, m)`` with a target array), returning the per-row losses.
    """
    p = ad.clip(probabilities, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.zeros(p.shape)
    if p.ndim == 1:
        y[int(target)] = 1.0
    else:
        y[np.arange(p.shape[0]), np.asarray(target)] = 1.0
    terms = ad.mul(y, ad.log(p)) + ad.mul(1.0 - y, ad.log(1.0 - p))
    return -ad.sum(terms, axis=-1)


def cr_loss(user, positive, negative, margin: float, space):
    """``max(d(u, pos) - d(u, neg) + margin, 0)`` row-wise, shape ``(B,)``."""
    gap = space.distance(user, positive) - space.distance(user, negative) + margin
    return ad.reshape(ad.relu(gap), (-1,))


# ---------------------------------------------------------------- optimiser

class Adam:
    """Per-parameter first/second moment estimation on Euclidean pre-images."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1**self.t)
            vhat = self.v[k] / (1 - b2**self.t)
            out[k] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


# ---------------------------------------------------------------- batches & negatives

def split_target(seq):
    """``(inputs, target)``: the last item is the label."""
    items = list(seq.items)
    return items[:-1], items[-1]


def sample_negatives(sequences, n_items: int, rng, k: int = 1) -> np.ndarray:
    """Uniform negatives from items absent from each user's full sequence, shape ``(B, k)``."""
    out = np.empty((len(sequences), k), dtype=np.intp)
    for b, seq in enumerate(sequences):
        seen = set(seq.items)
        if len(seen) >= n_items:
            raise DataError(f"user {seq.user_id} interacted with every item; no negative exists")
        for j in range(k):
            while True:
                cand = int(rng.integers(n_items))
                if cand not in seen:
                    out[b, j] = cand
                    break
    return out


def batch_loss(T: dict, graph, sequences, negatives, model_cfg: ModelConfig, train_cfg: TrainConfig,
               global_items=None):
    """Mean total loss over the batch as a tensor, plus the ce/cr means and forward output."""
    inputs, targets = zip(*(split_target(s) for s in sequences))
    targets = np.asarray(targets, dtype=np.intp)
    space = model_cfg.space
    out = forward_batch(T, graph, list(inputs), model_cfg, global_items=global_items)
    probs = ad.softmax(out.scores, axis=-1)
    ce = ad.mean(ce_loss(probs, targets))
    pos = ad.gather_rows(out.item_points, targets)
    cr_terms = []
    for j in range(negatives.shape[1]):
        neg = ad.gather_rows(out.item_points, negatives[:, j])
        cr_terms.append(ad.mean(cr_loss(out.user_points, pos, neg, train_cfg.margin, space)))
    cr = cr_terms[0]
    for extra in cr_terms[1:]:
        cr = cr + extra
    if len(cr_terms) > 1:
        cr = ad.scale(cr, 1.0 / len(cr_terms))
    total = ce + ad.scale(cr, train_cfg.omega)
    return total, ce, cr, out


def loss_and_grads(params: dict, graph, sequences, negatives, model_cfg, train_cfg):
    T = to_tensors(params, requires_grad=True)
    with ad.Tape() as tape:
        total, ce, cr, _ = batch_loss(T, graph, sequences, negatives, model_cfg, train_cfg)
    grads = ad.backward(tape, total, wrt=list(T.values()))
    named = {k: grads[t] for k, t in T.items()}
    breakdown = LossBreakdown(ce.item(), cr.item(), total.item())
    return breakdown, named


def train_step(params: dict, graph, sequences, negatives, model_cfg: ModelConfig, train_cfg: TrainConfig,
               optimizer: Adam):
    """One optimiser update on the batch's mean total loss."""
    breakdown, grads = loss_and_grads(params, graph, sequences, negatives, model_cfg, train_cfg)
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if not math.isfinite(breakdown.total) or bad:
        raise NumericalError(f"non-finite loss/gradient (total={breakdown.total}, bad blocks={bad})")
    return breakdown, optimizer.step(params, grads)


# ---------------------------------------------------------------- early stopping & fit

@dataclass
class EarlyStopping:
    """Stop once the monitored loss has not improved for ``patience`` consecutive epochs."""

    patience: int = 10
    best: float = math.inf
    best_epoch: int = -1
    bad_epochs: int = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record ``loss`` for ``epoch``; returns True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class FitResult:
    params: dict
    curve: list = field(default_factory=list)   # dicts: epoch, train_*, valid_*
    best_epoch: int = 0
    stopped_epoch: int = 0


def evaluate_loss(params, graph, sequences, model_cfg, train_cfg, seed=0, batch_size=512) -> LossBreakdown:
    """Mean loss over ``sequences`` with seeded negatives (no tape)."""
    if not sequences:
        raise DataError("cannot evaluate loss on an empty split")
    rng = np.random.default_rng(seed)
    negs = sample_negatives(sequences, params["item_emb"].shape[0] - 1, rng, train_cfg.negatives_per_positive)
    T = to_tensors(params)
    gi = global_item_points(T, graph, model_cfg)
    tot = ce = cr = 0.0
    for s in range(0, len(sequences), batch_size):
        chunk = sequences[s:s + batch_size]
        t, c, r, _ = batch_loss(T, graph, chunk, negs[s:s + batch_size], model_cfg, train_cfg, gi)
        w = len(chunk)
        tot += t.item() * w
        ce += c.item() * w
        cr += r.item() * w
    n = len(sequences)
    return LossBreakdown(ce / n, cr / n, tot / n)


def fit(split, model_cfg: ModelConfig, train_cfg: TrainConfig, params: dict | None = None,
        eval_k: int = 10, progress=None) -> FitResult:
    """Train on ``split.train`` and keep the parameters with the best validation loss.

    Epoch 0 is the untrained model; training stops when validation loss
    fails to improve for ``patience`` consecutive epochs or at
    ``max_epochs``.
    """
    from .evaluation import hit_rate_at

    if not split.train or not split.valid:
        raise DataError("fit needs nonempty train and valid splits")
    graph = build_global_graph(split.train, split.n_users, split.n_items)
    if params is None:
        params = init_params(split.n_users, split.n_items, model_cfg, seed=train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    opt = Adam(params, train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)

    def validate(p):
        vl = evaluate_loss(p, graph, split.valid, model_cfg, train_cfg, seed=train_cfg.seed + 1)
        return vl, hit_rate_at(p, graph, split.valid, model_cfg, eval_k)

    stopper = EarlyStopping(train_cfg.patience)
    vl, vh = validate(params)
    stopper.update(0, vl.total)
    best = copy.deepcopy(params)
    curve = [dict(epoch=0, train_total=float("nan"), train_ce=float("nan"), train_cr=float("nan"),
                  valid_total=vl.total, valid_h10=vh)]
    epoch = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(split.train))
        seqs = [split.train[i] for i in order]
        negs = sample_negatives(seqs, split.n_items, rng, train_cfg.negatives_per_positive)
        sums = np.zeros(3)
        for s in range(0, len(seqs), train_cfg.batch_size):
            chunk = seqs[s:s + train_cfg.batch_size]
            lb, params = train_step(params, graph, chunk, negs[s:s + train_cfg.batch_size],
                                    model_cfg, train_cfg, opt)
            sums += np.array([lb.total, lb.ce, lb.cr]) * len(chunk)
        sums /= len(seqs)
        vl, vh = validate(params)
        curve.append(dict(epoch=epoch, train_total=sums[0], train_ce=sums[1], train_cr=sums[2],
                          valid_total=vl.total, valid_h10=vh))
        if progress:
            progress(curve[-1])
        log.info("epoch %d train %.4f valid %.4f H@%d %.4f", epoch, sums[0], vl.total, eval_k, vh)
        stop = stopper.update(epoch, vl.total)
        if stopper.best_epoch == epoch:
            best = copy.deepcopy(params)
        if stop:
            break
    return FitResult(best, curve, stopper.best_epoch, epoch)
