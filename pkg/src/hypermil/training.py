"""Optimization: Adam, top-K instance selection, and the training loop.

One slide is one optimization step. Per slide the loop embeds the bag,
selects the top-K patches/regions whose raw features are most
cosine-similar to the label class's frozen base vector (the stand-in for
instance labels), assembles the total objective, backpropagates, and takes
an Adam step. Slides whose embeddings hit a genuinely undefined geometric
configuration (coincident points, an embedding at the origin) are skipped
and counted; a run fails if more than 1% of steps skip.

Everything is deterministic in (seed, bundle, config): epoch shuffles and
fold seeds derive from seed sequences, and no other randomness exists.
"""

import json
import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .data import FeatureBag
from .errors import ConfigError, GeometryError, TrainingError
from .geometry import GeometryConfig
from .losses import (
    AlignmentBatch,
    LossConfig,
    ama_loss,
    cls_loss,
    con_loss,
    ent_loss,
    total_loss,
)
from .model import (
    HierarchyLevel,
    ModelDims,
    aggregate,
    embed_slide,
    init_params,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    epochs: int = 20
    seed: int = 0
    k: int = 16
    d_hidden: int = 0  # 0 means match the input dimension
    shared_aggregators: bool = False
    curvature: float = 1.0
    val_every: int = 1
    accumulate: int = 1
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.val_every < 1 or self.accumulate < 1:
            raise ConfigError("val_every and accumulate must be at least 1")

    def geometry(self):
        return GeometryConfig(curvature=self.curvature, dim=self.k)


_LOSS_KEYS = {f.name for f in fields(LossConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"loss"}


def train_config_from_dict(raw):
    """Build a TrainConfig from a flat mapping; unknown keys are an error."""
    unknown = sorted(set(raw) - _TRAIN_KEYS - _LOSS_KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    loss = LossConfig(**{k: v for k, v in raw.items() if k in _LOSS_KEYS})
    train = {k: v for k, v in raw.items() if k in _TRAIN_KEYS}
    return TrainConfig(loss=loss, **train)


def load_train_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a single configuration object")
    return train_config_from_dict(raw)


# -- Adam ----------------------------------------------------------------------


class AdamState:
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params):
        self.step = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.trainable()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.trainable()}


def adam_step(params, state, lr):
    """Bias-corrected Adam update in place; parameters without a gradient
    this step are left untouched."""
    state.step += 1
    c1 = 1.0 - AdamState.beta1 ** state.step
    c2 = 1.0 - AdamState.beta2 ** state.step
    for name, p in params.trainable():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
        m = state.m[name]
        v = state.v[name]
        m *= AdamState.beta1
        m += (1.0 - AdamState.beta1) * g
        v *= AdamState.beta2
        v += (1.0 - AdamState.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + AdamState.eps)


# -- top-K selection ------------------------------------------------------------


def _cosine(rows, vector):
    norms = np.linalg.norm(rows, axis=1)
    vnorm = np.linalg.norm(vector)
    denom = np.maximum(norms * vnorm, 1e-12)
    return rows @ vector / denom


def select_top_k(bag, class_vectors, label, k):
    """Per-level index sets of the K embeddings most similar to the label class.

    Similarity is cosine between raw features and the label class's base
    vector: per patch at patch level, per region mean at region level. K is
    truncated to what the bag holds; ranking ties break toward the lower
    index. The slide level always selects the single slide embedding.
    """
    vector = np.asarray(class_vectors[label], dtype=np.float64)
    patches = np.concatenate(
        [np.asarray(r, dtype=np.float64) for r in bag.regions], axis=0
    )
    patch_sims = _cosine(patches, vector)
    patch_rows = np.argsort(-patch_sims, kind="stable")[:k]
    region_means = np.stack(
        [np.asarray(r, dtype=np.float64).mean(axis=0) for r in bag.regions]
    )
    region_sims = _cosine(region_means, vector)
    region_rows = np.argsort(-region_sims, kind="stable")[:k]
    return {
        HierarchyLevel.PATCH: patch_rows,
        HierarchyLevel.REGION: region_rows,
        HierarchyLevel.SLIDE: np.array([0]),
    }


# -- training loop ---------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: float
    val_f1: float


@dataclass
class TrainResult:
    params: object          # final-epoch parameters
    best_params: object     # best validation AUC checkpoint
    best_val_auc: float
    log: list
    skipped: int


def _fold_seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def train(bundle, split, cfg):
    """Train on split.train_ids, validate on split.val_ids."""
    from .evaluation import evaluate  # local import, evaluation uses train()

    by_id = {bag.slide_id: bag for bag in bundle.bags}
    train_bags = [by_id[i] for i in split.train_ids]
    val_bags = [by_id[i] for i in split.val_ids]
    if not train_bags:
        raise TrainingError("training split is empty")
    n_classes = len(bundle.class_vectors)
    if n_classes < 2:
        raise TrainingError(f"need at least 2 classes, got {n_classes}")

    dims = ModelDims(
        d_in=bundle.dim,
        k=cfg.k,
        d_hidden=cfg.d_hidden,
        n_classes=n_classes,
        shared_aggregators=cfg.shared_aggregators,
    )
    geom = cfg.geometry()
    params = init_params(dims, cfg.seed, bundle.class_vectors)
    state = AdamState(params)

    selections = {
        bag.slide_id: select_top_k(bag, bundle.class_vectors, bag.label,
                                   cfg.loss.top_k)
        for bag in train_bags
    }

    history = []
    best_params = None
    best_val_auc = -1.0
    skipped = 0
    steps = 0
    pending = 0
    params.zero_grads()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, epoch])
        ).permutation(len(train_bags))
        epoch_losses = []
        for pos in order:
            bag = train_bags[pos]
            steps += 1
            try:
                emb = embed_slide(bag, params, geom)
                loss = total_loss(emb, bag.label, selections[bag.slide_id],
                                  cfg.loss, geom)
                loss.backward()
            except GeometryError as exc:
                skipped += 1
                params.zero_grads()
                pending = 0
                log.warning("skipping slide %s: %s", bag.slide_id, exc)
                continue
            epoch_losses.append(float(loss.data))
            pending += 1
            if pending >= cfg.accumulate:
                adam_step(params, state, cfg.lr)
                params.zero_grads()
                pending = 0
        if pending:
            adam_step(params, state, cfg.lr)
            params.zero_grads()
            pending = 0

        val_auc = float("nan")
        val_f1 = float("nan")
        if val_bags and (epoch + 1) % cfg.val_every == 0:
            val_auc, val_f1 = evaluate(val_bags, params, geom)[:2]
            # ties go to the later epoch: once AUC saturates the distances
            # keep calibrating, so the most-trained of the tied checkpoints wins
            if val_auc >= best_val_auc:
                best_val_auc = val_auc
                best_params = params.copy()
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
                val_auc=val_auc,
                val_f1=val_f1,
            )
        )

    if skipped > 0.01 * steps:
        raise TrainingError(
            f"{skipped} of {steps} steps hit degenerate geometry; "
            "the run is unreliable"
        )
    if best_params is None:
        best_params = params.copy()
        best_val_auc = float("nan")
    return TrainResult(
        params=params,
        best_params=best_params,
        best_val_auc=best_val_auc,
        log=history,
        skipped=skipped,
    )


# -- gradient-check harness ------------------------------------------------------


def _tiny_bag(rng, d_in, n_regions, n_patches, n_classes):
    label = int(rng.integers(n_classes))
    regions = [
        rng.standard_normal((n_patches, d_in)) for _ in range(n_regions)
    ]
    return FeatureBag(slide_id="tiny", label=label, site="site-0", regions=regions)


def gradient_check_suite(trials=20, seed=0, h=1e-5):
    """Finite-difference checks of every loss family over a tiny model.

    Returns {check name: max relative error across trials}. Raises
    NumericalError if any forward pass produces NaN.
    """
    from . import geometry as geo

    names = ("aggregation", "cls_loss", "ama_loss", "ent_loss", "con_loss",
             "total_loss")
    worst = {name: 0.0 for name in names}
    d_in, k, n_classes = 8, 4, 2
    dims = ModelDims(d_in=d_in, k=k, n_classes=n_classes)
    geom = GeometryConfig(curvature=1.0, dim=k)
    loss_cfg = LossConfig()

    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, trial]))
        params = init_params(dims, _fold_seed(seed, trial, 1))
        bag = _tiny_bag(rng, d_in, n_regions=2, n_patches=3, n_classes=n_classes)
        label = bag.label
        others = [c for c in range(n_classes) if c != label]
        selections = select_top_k(bag, params.semantics.base.data, label,
                                  loss_cfg.top_k)
        leaves = [t for _, t in params.trainable()]

        probe = rng.standard_normal((1, k))
        features = ad.Tensor(rng.standard_normal((4, k)), requires_grad=True)

        def f_agg():
            out = aggregate(features, params.agg_region)
            return (out * ad.Tensor(probe)).sum()

        def f_cls():
            emb = embed_slide(bag, params, geom)
            return cls_loss(emb, label, loss_cfg, geom)

        def f_ama():
            emb = embed_slide(bag, params, geom)
            text = emb.text[HierarchyLevel.SLIDE]
            batch = AlignmentBatch(
                query=emb.slide,
                positive=geo.select(text, [label]),
                negatives=geo.select(text, others),
            )
            return ama_loss(batch, loss_cfg, geom)

        def f_ent():
            emb = embed_slide(bag, params, geom)
            return ent_loss(emb.slide, emb.regions, loss_cfg, geom)

        def f_con():
            emb = embed_slide(bag, params, geom)
            text = emb.text[HierarchyLevel.SLIDE]
            return con_loss(geo.select(text, others), emb.patches, loss_cfg, geom)

        def f_total():
            emb = embed_slide(bag, params, geom)
            return total_loss(emb, label, selections, loss_cfg, geom)

        checks = {
            "aggregation": (f_agg, [features, params.agg_region.w1,
                                    params.agg_region.w2]),
            "cls_loss": (f_cls, leaves),
            "ama_loss": (f_ama, leaves),
            "ent_loss": (f_ent, leaves),
            "con_loss": (f_con, leaves),
            "total_loss": (f_total, leaves),
        }
        for name, (f, tensors) in checks.items():
            err = ad.finite_difference_check(f, tensors, h=h)
            if err > worst[name]:
                worst[name] = err
    return worst
