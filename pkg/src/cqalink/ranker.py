"""Feature fusion, candidate ranking, and end-to-end training.

The fused score is affine over the five features (context score, prior,
and the three auxiliary scores), softmax-normalized over each mention's
candidate set, trained with cross-entropy against the gold candidate.
Masked features contribute exactly zero, so the all-aux-masked model is
bit-for-bit the base module.  Training runs decoupled-weight-decay Adam
with linear warmup over the first tenth of the steps and linear decay to
zero afterwards; after every epoch the validation accuracy decides which
parameters are kept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from .aliases import AliasIndex
from .config import ModelConfig, TrainConfig
from .corpus import CqaText
from .encoder import Encoder, EncoderConfig, aux_sequence_length, param_order
from .features import (
    AUX_KINDS,
    FEATURE_NAMES,
    N_FEATURES,
    MentionInstance,
    ScoreResult,
    backward_instances,
    build_instances,
    score_instances,
)
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

_NO_DECAY_SUFFIXES = (".gamma", ".beta", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; training aborted."""


@dataclass(frozen=True)
class FeatureMask:
    flags: tuple[bool, bool, bool, bool, bool]

    _NAMES = {"parallel": 2, "topic": 3, "user": 4}

    @classmethod
    def full(cls) -> "FeatureMask":
        return cls((True,) * 5)

    @classmethod
    def base(cls) -> "FeatureMask":
        return cls((True, True, False, False, False))

    @classmethod
    def from_string(cls, spec: str) -> "FeatureMask":
        """"base", "full", "base+parallel+user", or a comma list of
        feature names (ctxt, prior, parallel, topic, user)."""
        s = spec.strip().lower()
        if s in ("full", "all"):
            return cls.full()
        if s == "base":
            return cls.base()
        if s.startswith("base+"):
            flags = [True, True, False, False, False]
            for part in s[len("base+") :].split("+"):
                part = part.strip()
                if part not in cls._NAMES:
                    raise ValueError(f"unknown aux feature {part!r} in mask {spec!r}")
                flags[cls._NAMES[part]] = True
            return cls(tuple(flags))
        columns = {"ctxt": 0, "prior": 1, **cls._NAMES}
        flags = [False] * 5
        for part in s.split(","):
            part = part.strip()
            if part not in columns:
                raise ValueError(f"unknown feature {part!r} in mask {spec!r}")
            flags[columns[part]] = True
        if not any(flags):
            raise ValueError(f"mask {spec!r} enables no features")
        return cls(tuple(flags))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.flags, dtype=bool)

    @property
    def label(self) -> str:
        if all(self.flags):
            return "full"
        if self.flags == (True, True, False, False, False):
            return "base"
        if self.flags[0] and self.flags[1]:
            extra = [k for k, col in self._NAMES.items() if self.flags[col]]
            if extra:
                return "base+" + "+".join(extra)
        names = [FEATURE_NAMES[i] for i, on in enumerate(self.flags) if on]
        return ",".join(n.replace("aux_", "") for n in names)


class FusionLayer:
    """Affine map over masked features: s = w . (f * mask) + b."""

    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = np.asarray(w, dtype=np.float64).reshape(N_FEATURES)
        self.b = np.asarray(b, dtype=np.float64).reshape(1)

    @classmethod
    def init(cls, seed=None) -> "FusionLayer":
        # deterministic positive start: every feature is an evidence-for
        # score, and encoders trained under a frozen fusion need a uniform
        # orientation rather than sign luck
        del seed
        bound = 1.0 / math.sqrt(N_FEATURES)
        return cls(np.full(N_FEATURES, bound), np.zeros(1))

    def fuse(self, features: np.ndarray, mask: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        m = np.asarray(mask, dtype=np.float64)
        return (f * m) @ self.w + self.b[0]


def normalize(scores: np.ndarray) -> np.ndarray:
    """Max-shifted softmax; a probability distribution over candidates."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot normalize an empty score list")
    e = np.exp(s - s.max())
    return e / e.sum()


def predict_index(scores: np.ndarray) -> int | None:
    """Argmax candidate index, first index on ties; None when empty."""
    s = np.asarray(scores)
    if s.size == 0:
        return None
    return int(np.argmax(s))


def cross_entropy(prob_lists: Sequence[np.ndarray], gold_indices: Sequence[int]) -> float:
    """Sum over mentions of -log p(gold)."""
    if len(prob_lists) != len(gold_indices):
        raise ValueError("probability lists and gold indices differ in length")
    total = 0.0
    for probs, gold in zip(prob_lists, gold_indices):
        total += -math.log(max(float(probs[gold]), 1e-300))
    return total


def lr_scale(step: int, total_steps: int, warmup_frac: float = 0.1) -> float:
    """Linear warmup over the first warmup_frac of steps, then linear
    decay to zero at total_steps."""
    warm = max(1, int(round(total_steps * warmup_frac)))
    if step < warm:
        return (step + 1) / warm
    span = max(1, total_steps - warm)
    return max(0.0, (total_steps - step) / span)


class AdamW:
    """Adam with decoupled weight decay; decay skips biases and norms."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}
        # bias correction is per parameter so a tensor frozen for a while
        # (absent from grads) resumes with exact correction, not a stale t
        self._t = {k: 0 for k in params}
        self._decay = {
            k: not (k.endswith(_NO_DECAY_SUFFIXES) or k == "fusion.b") for k in params
        }

    def step(self, grads: dict[str, np.ndarray], scale: float = 1.0) -> None:
        """Update every parameter present in grads; others stay untouched."""
        self.t += 1
        lr_t = self.lr * scale
        for name, p in self.params.items():
            if name not in grads:
                continue
            t = self._t[name] = self._t[name] + 1
            bc1 = 1.0 - self.beta1**t
            bc2 = 1.0 - self.beta2**t
            g = np.asarray(grads[name], dtype=p.dtype)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self._decay[name]:
                update = update + self.weight_decay * p
            p -= lr_t * update


class Model:
    """Both encoders, the fusion layer, and the tokenizer, as one unit."""

    def __init__(
        self,
        tokenizer: Tokenizer,
        base: Encoder,
        aux: Encoder,
        fusion: FusionLayer,
        config: ModelConfig,
    ):
        self.tokenizer = tokenizer
        self.base = base
        self.aux = aux
        self.fusion = fusion
        self.config = config

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references, namespaced, in checkpoint order."""
        out: dict[str, np.ndarray] = {}
        for name in param_order(self.base.config):
            out["base." + name] = self.base.params[name]
        for name in param_order(self.aux.config):
            out["aux." + name] = self.aux.params[name]
        out["fusion.w"] = self.fusion.w
        out["fusion.b"] = self.fusion.b
        return out

    def save(self, path: str | Path) -> None:
        header = {"kind": "cqalink-model", "model_config": self.config.to_dict()}
        ckpt.save_checkpoint(path, header, self.parameters())
        self.tokenizer.save(ckpt.vocab_sidecar(path))

    @classmethod
    def load(cls, path: str | Path, dtype: np.dtype = np.float32) -> "Model":
        header, tensors = ckpt.load_checkpoint(path)
        if header.get("kind") != "cqalink-model":
            raise ckpt.CheckpointError(f"{path}: not a model checkpoint")
        mc = ModelConfig.from_dict(header["model_config"])
        tokenizer = Tokenizer.load(ckpt.vocab_sidecar(path))
        vocab_size = tensors["base.tok_emb"].shape[0]
        if vocab_size != tokenizer.vocab_size:
            raise ckpt.CheckpointError(
                f"{path}: checkpoint vocabulary {vocab_size} != sidecar {tokenizer.vocab_size}"
            )
        base_cfg, aux_cfg = encoder_configs(mc, vocab_size)
        base = Encoder(
            base_cfg,
            {n: tensors["base." + n].astype(dtype) for n in param_order(base_cfg)},
        )
        aux = Encoder(
            aux_cfg,
            {n: tensors["aux." + n].astype(dtype) for n in param_order(aux_cfg)},
        )
        fusion = FusionLayer(tensors["fusion.w"], tensors["fusion.b"])
        return cls(tokenizer, base, aux, fusion, mc)


def encoder_configs(mc: ModelConfig, vocab_size: int) -> tuple[EncoderConfig, EncoderConfig]:
    base_cfg = EncoderConfig(
        vocab_size=vocab_size,
        dim=mc.dim,
        heads=mc.heads,
        layers=mc.layers,
        ff_dim=mc.ff_dim,
        max_positions=mc.pair_budget,
        window=None,
        dropout=mc.dropout,
    )
    aux_cfg = EncoderConfig(
        vocab_size=vocab_size,
        dim=mc.dim,
        heads=mc.heads,
        layers=mc.layers,
        ff_dim=mc.ff_dim,
        max_positions=aux_sequence_length(mc.max_k, mc.desc_limit, mc.text_limit),
        window=mc.window,
        global_positions=(0,),
        dropout=mc.dropout,
    )
    return base_cfg, aux_cfg


def build_model(
    tokenizer: Tokenizer, mc: ModelConfig, seed: int, dtype: np.dtype = np.float32
) -> Model:
    ss = np.random.SeedSequence(seed)
    base_ss, aux_ss, fusion_ss = ss.spawn(3)
    base_cfg, aux_cfg = encoder_configs(mc, tokenizer.vocab_size)
    base = Encoder.init(base_cfg, base_ss, dtype)
    aux = Encoder.init(aux_cfg, aux_ss, dtype)
    fusion = FusionLayer.init(fusion_ss)
    return Model(tokenizer, base, aux, fusion, mc)


def vocabulary_texts(texts: Sequence[CqaText], index: AliasIndex) -> list[str]:
    """Everything the encoders may see: the CQA side of the training split
    plus every entity description in the index."""
    pool: list[str] = []
    for z in texts:
        pool.append(z.question)
        pool.extend(a.text for a in z.answers)
        seen_users: set[str] = set()
        for a in z.answers:
            if a.user.name not in seen_users:
                seen_users.add(a.user.name)
                pool.extend(a.user.questions)
        for tag in z.topic_tags:
            pool.extend(tag.questions)
    pool.extend(index.description(e) for e in index.entities)
    return pool


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    val_accuracies: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = 0.0
    steps: int = 0
    n_train_mentions: int = 0
    n_train_used: int = 0
    n_train_excluded: int = 0  # labeled but gold missing from candidates


def predict_instances(
    model: Model,
    instances: Sequence[MentionInstance],
    mask: np.ndarray,
) -> tuple[list[int | None], ScoreResult]:
    result = score_instances(
        instances,
        model.base,
        model.aux,
        model.tokenizer.pad_id,
        mask,
        chunk_rows=model.config.chunk_rows,
    )
    predictions: list[int | None] = []
    for f in result.features:
        scores = model.fusion.fuse(f, mask)
        predictions.append(predict_index(scores))
    return predictions, result


def labeled_accuracy(
    instances: Sequence[MentionInstance], predictions: Sequence[int | None]
) -> tuple[int, int]:
    """(n_labeled, n_correct): unresolvable or pruned-gold count as wrong."""
    n_labeled = 0
    n_correct = 0
    for inst, pred in zip(instances, predictions):
        if inst.mention.gold is None:
            continue
        n_labeled += 1
        if pred is not None and inst.gold_index is not None and pred == inst.gold_index:
            n_correct += 1
    return n_labeled, n_correct


def train(
    train_texts: Sequence[CqaText],
    val_texts: Sequence[CqaText],
    index: AliasIndex,
    mc: ModelConfig,
    tc: TrainConfig,
    *,
    tokenizer: Tokenizer | None = None,
    dtype: np.dtype = np.float32,
) -> tuple[Model, TrainReport]:
    """The end-to-end protocol: per-epoch validation, best epoch kept."""
    if not train_texts:
        raise ValueError("training split is empty")
    if tokenizer is None:
        tokenizer = Tokenizer.build(vocabulary_texts(train_texts, index), mc.vocab_size)
    model = build_model(tokenizer, mc, tc.seed, dtype)
    mask = FeatureMask.from_string(tc.mask).as_array()

    train_instances = build_instances(train_texts, index, tokenizer, mc)
    val_instances = build_instances(val_texts, index, tokenizer, mc)
    report = TrainReport()
    report.n_train_mentions = len(train_instances)
    by_text: dict[str, list[MentionInstance]] = {z.id: [] for z in train_texts}
    for inst in train_instances:
        if inst.mention.gold is None:
            continue
        if inst.gold_index is None:
            report.n_train_excluded += 1
            continue
        by_text[inst.text_id].append(inst)
    report.n_train_used = sum(len(v) for v in by_text.values())
    if report.n_train_excluded:
        log.info(
            "excluded %d labeled mentions whose gold is outside the candidate set",
            report.n_train_excluded,
        )
    if report.n_train_used == 0:
        raise ValueError("no trainable mentions (every gold missing from candidates)")

    text_ids = [z.id for z in train_texts]
    ss = np.random.SeedSequence(tc.seed)
    _, _, _, shuffle_ss, dropout_ss = ss.spawn(5)  # first three used by build_model
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    optimizer = AdamW(
        model.parameters(),
        lr=tc.lr,
        beta1=tc.beta1,
        beta2=tc.beta2,
        eps=tc.eps,
        weight_decay=tc.weight_decay,
    )
    steps_per_epoch = max(1, math.ceil(len(text_ids) / tc.batch_texts))
    total_steps = steps_per_epoch * tc.epochs
    freeze_epochs = int(math.ceil(tc.fusion_freeze_frac * tc.epochs))
    step = 0
    best_params: dict[str, np.ndarray] | None = None

    for epoch in range(tc.epochs):
        fusion_frozen = epoch < freeze_epochs
        order = list(range(len(text_ids)))
        shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        epoch_mentions = 0
        for start in range(0, len(order), tc.batch_texts):
            batch_ids = [text_ids[i] for i in order[start : start + tc.batch_texts]]
            batch = [inst for tid in batch_ids for inst in by_text[tid]]
            if not batch:
                step += 1
                continue
            result = score_instances(
                batch,
                model.base,
                model.aux,
                tokenizer.pad_id,
                mask,
                chunk_rows=mc.chunk_rows,
                train=True,
                rng=dropout_rng,
                keep_tape=True,
            )
            n = len(batch)
            loss_sum = 0.0
            dfeatures: list[np.ndarray] = []
            dw = np.zeros(N_FEATURES)
            db = 0.0
            for inst, f in zip(batch, result.features):
                keep = mask
                if tc.feature_dropout > 0.0:
                    # inverted scaling keeps the expected feature unchanged
                    live = dropout_rng.random(N_FEATURES) >= tc.feature_dropout
                    keep = mask * live / (1.0 - tc.feature_dropout)
                f_kept = f * keep
                scores = f_kept @ model.fusion.w + model.fusion.b[0]
                probs = normalize(scores)
                loss_sum += -math.log(max(float(probs[inst.gold_index]), 1e-300))
                dscore = probs.copy()
                dscore[inst.gold_index] -= 1.0
                dscore /= n  # batch-mean reduction
                dw += dscore @ f_kept
                db += dscore.sum()
                dfeatures.append(dscore[:, None] * (model.fusion.w * keep)[None, :])
            if not math.isfinite(loss_sum):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step} "
                    f"(lr {tc.lr}, batch of {n} mentions)"
                )
            grads_base, grads_aux = backward_instances(
                result, batch, model.base, model.aux, dfeatures
            )
            grads = {("base." + k): v for k, v in grads_base.items()}
            grads.update({("aux." + k): v for k, v in grads_aux.items()})
            if not fusion_frozen:
                grads["fusion.w"] = dw
                grads["fusion.b"] = np.asarray([db])
            optimizer.step(grads, lr_scale(step, total_steps, tc.warmup_frac))
            step += 1
            epoch_loss += loss_sum
            epoch_mentions += n
        report.epoch_losses.append(epoch_loss / max(1, epoch_mentions))

        predictions, _ = predict_instances(model, val_instances, mask)
        n_labeled, n_correct = labeled_accuracy(val_instances, predictions)
        val_acc = n_correct / n_labeled if n_labeled else 0.0
        report.val_accuracies.append(val_acc)
        if best_params is None or val_acc > report.best_val_accuracy:
            report.best_val_accuracy = val_acc
            report.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.parameters().items()}
        log.info(
            "epoch %d: train loss %.4f, val accuracy %.4f",
            epoch,
            report.epoch_losses[-1],
            val_acc,
        )

    report.steps = step
    if best_params is not None:
        live = model.parameters()
        for k, v in best_params.items():
            live[k][...] = v
    return model, report


def train_fusion(
    features: Sequence[np.ndarray],
    gold_indices: Sequence[int],
    mask: np.ndarray,
    *,
    lr: float = 0.05,
    steps: int = 200,
    seed: int = 0,
    weight_decay: float = 0.0,
) -> tuple[FusionLayer, list[float], list[float]]:
    """Full-batch fusion-only training over precomputed (frozen-encoder)
    feature matrices; returns (layer, per-step mean losses, accuracies)."""
    fusion = FusionLayer.init(np.random.SeedSequence(seed))
    params = {"fusion.w": fusion.w, "fusion.b": fusion.b}
    optimizer = AdamW(params, lr=lr, weight_decay=weight_decay)
    losses: list[float] = []
    accuracies: list[float] = []
    n = len(features)
    if n == 0:
        raise ValueError("no feature matrices to train on")
    for _ in range(steps):
        loss_sum = 0.0
        correct = 0
        dw = np.zeros(N_FEATURES)
        db = 0.0
        for f, gold in zip(features, gold_indices):
            scores = fusion.fuse(f, mask)
            probs = normalize(scores)
            loss_sum += -math.log(max(float(probs[gold]), 1e-300))
            if predict_index(scores) == gold:
                correct += 1
            dscore = probs.copy()
            dscore[gold] -= 1.0
            dscore /= n
            dw += dscore @ (f * mask)
            db += dscore.sum()
        if not math.isfinite(loss_sum):
            raise TrainingDiverged("non-finite loss in fusion-only training")
        losses.append(loss_sum / n)
        accuracies.append(correct / n)
        optimizer.step({"fusion.w": dw, "fusion.b": np.asarray([db])})
    return fusion, losses, accuracies
