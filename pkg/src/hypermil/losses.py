"""Loss functions: angular alignment, hierarchy consistency, classification.

Three families, combined as  L = L_cls + lambda_a * L_ama + lambda_s * L_shc:

* alignment (ama): an InfoNCE-style loss over angle-distance based
  similarities between image and class-text embeddings, applied in both
  query directions at every hierarchy level,
* hierarchy consistency (shc): entailment penalties that keep subordinate
  embeddings inside their parent's cone, plus contradiction penalties that
  keep wrong-class text cones away from image embeddings,
* classification (cls): cross-entropy over the softmax of negative geodesic
  distances between the slide embedding and the per-class slide-level text
  embeddings.

The scalar cores (ama_nll, ent_penalty, con_penalty, cls_nll) take the
already-computed angles/similarities so they can be checked against
closed-form values; the wrappers compute those quantities from manifold
points. Exponential arguments inside the cone penalties are clamped at 700
so a badly violated pair yields a huge finite penalty instead of overflowing
to infinity.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .errors import ConfigError, ShapeError
from .model import HierarchyLevel

log = logging.getLogger(__name__)

_EXP_CLIP = 700.0


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.05
    alpha: float = 0.1
    beta_ent: float = 0.8
    beta_con: float = 0.8
    lambda_a: float = 1.0
    lambda_s: float = 10.0
    top_k: int = 8

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        for name in ("beta_ent", "beta_con"):
            beta = getattr(self, name)
            if not 0 < beta <= 1:
                raise ConfigError(f"{name} must be in (0, 1], got {beta}")
        if self.lambda_a < 0 or self.lambda_s < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be at least 1, got {self.top_k}")


@dataclass
class AlignmentBatch:
    query: geo.Points
    positive: geo.Points
    negatives: geo.Points

    def __post_init__(self):
        if self.negatives.count < 1:
            raise ShapeError("alignment batch needs at least one negative")


def _t(x):
    return x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x, dtype=float))


def _row_logsumexp(logits):
    # max-subtracted log-sum-exp along axis 1, keeping the column shape
    m = logits.max(axis=1, keepdims=True)
    return ad.log(ad.exp(logits - m).sum(axis=1, keepdims=True)) + m


# -- scalar cores -------------------------------------------------------------


def ama_nll(pos_similarity, negative_similarities, tau):
    """-log softmax: pos/tau against |neg_j|/tau.

    Both arguments may be batched: a column of positive similarities and a
    matrix with one row of negative similarities per positive. Returns the
    mean over rows.
    """
    pos = _t(pos_similarity).reshape(-1, 1)
    negs = _t(negative_similarities)
    if negs.ndim == 1:
        negs = negs.reshape(1, -1)
    if negs.shape[0] != pos.shape[0]:
        raise ShapeError(
            f"ama_nll: {pos.shape[0]} positives but {negs.shape[0]} negative rows"
        )
    logits = ad.concat([pos, ad.absolute(negs)], axis=1) * (1.0 / tau)
    nll = _row_logsumexp(logits) - logits[:, 0:1]
    return nll.mean()


def ent_penalty(theta, aperture, beta):
    """exp(theta/aperture - 1) * max(theta - beta * aperture, 0), elementwise."""
    theta = _t(theta)
    aperture = _t(aperture)
    scale = ad.exp(ad.clip(theta / aperture - 1.0, None, _EXP_CLIP))
    return scale * ad.scalar_maximum(theta - aperture * beta, 0.0)


def con_penalty(theta, aperture, beta, epsilon=1e-8):
    """exp(aperture/theta - 1) * max(aperture - beta * theta, 0), elementwise.

    theta is clamped to >= epsilon (zero gradient through the clamp) so a
    coincident-direction pair produces a large finite penalty.
    """
    theta = ad.clip(_t(theta), epsilon, None)
    aperture = _t(aperture)
    scale = ad.exp(ad.clip(aperture / theta - 1.0, None, _EXP_CLIP))
    return scale * ad.scalar_maximum(aperture - theta * beta, 0.0)


def cls_nll(distances, label):
    """-log softmax(-d)[label] over a vector of distances."""
    d = _t(distances).reshape(1, -1)
    if not 0 <= label < d.shape[1]:
        raise ShapeError(f"label {label} out of range for {d.shape[1]} classes")
    return (_row_logsumexp(-d) + d[:, label : label + 1]).reshape(())


# -- point-level wrappers -----------------------------------------------------


def semantic_similarity(u, v, reference_pair, geom):
    """Angle distance of the reference pair minus the angle distance (u, v)."""
    ref_pos, ref_neg = reference_pair
    ref = geo.angle_distance(ref_pos, ref_neg, geom)
    return (ref - geo.angle_distance(u, v, geom)).reshape(())


def ama_loss(batch, cfg, geom):
    """Alignment loss for one query against one positive and J negatives.

    The per-negative logit uses its own reference phi(positive, negative_j);
    the positive logit uses the mean reference over negatives, which
    collapses to the plain definition when J = 1.
    """
    refs = geo.angle_distance(batch.positive, batch.negatives, geom)
    phi_pos = geo.angle_distance(batch.query, batch.positive, geom)
    phi_negs = geo.angle_distance(batch.query, batch.negatives, geom)
    pos_sim = refs.mean() - phi_pos.reshape(())
    neg_sims = refs - phi_negs
    return ama_nll(pos_sim, neg_sims, cfg.tau)


def ent_loss(u, v, cfg, geom):
    """Mean entailment penalty over all (u_i, v_j) pairs."""
    return _ent_matrix(u, v, cfg, geom).mean()


def con_loss(u, v, cfg, geom):
    """Mean contradiction penalty over all (u_i, v_j) pairs."""
    return _con_matrix(u, v, cfg, geom).mean()


def _ent_matrix(u, v, cfg, geom):
    theta = geo.exterior_angle(u, v, geom)
    aperture = geo.half_aperture(u, geom, cfg.alpha)
    return ent_penalty(theta, aperture, cfg.beta_ent)


def _con_matrix(u, v, cfg, geom):
    theta = geo.exterior_angle(u, v, geom)
    aperture = geo.half_aperture(u, geom, cfg.alpha)
    return con_penalty(theta, aperture, cfg.beta_con, geom.epsilon)


# -- per-slide assemblies -----------------------------------------------------

_LEVELS = (HierarchyLevel.SLIDE, HierarchyLevel.REGION, HierarchyLevel.PATCH)


def _image_sets(embeddings, selections):
    return {
        HierarchyLevel.SLIDE: embeddings.slide,
        HierarchyLevel.REGION: geo.select(
            embeddings.regions, selections[HierarchyLevel.REGION]
        ),
        HierarchyLevel.PATCH: geo.select(
            embeddings.patches, selections[HierarchyLevel.PATCH]
        ),
    }


def ama_total(embeddings, label, selections, cfg, geom):
    """Bidirectional alignment loss summed over the three levels.

    At each level the image side is the top-K selected embeddings of the
    slide's class (the slide embedding itself at slide level). Image-query
    terms use the label-class text as positive and the other classes' text
    as negatives; text-query terms use each selected image embedding as
    positive. Terms at a level average over the selected embeddings.
    """
    n_classes = embeddings.text[HierarchyLevel.SLIDE].count
    others = [c for c in range(n_classes) if c != label]
    if not others:
        return ad.Tensor(0.0)
    image_sets = _image_sets(embeddings, selections)
    total = ad.Tensor(0.0)
    for level in _LEVELS:
        image = image_sets[level]
        if image.count == 0:
            log.debug("no selected embeddings at %s, level skipped", level.name)
            continue
        text = embeddings.text[level]
        text_pos = geo.select(text, [label])
        text_neg = geo.select(text, others)

        # one [K x C] angle matrix per level, split into the label column
        # and the wrong-class columns; [1 x C-1] between the label text
        # and the others
        phi_img = geo.angle_distance(image, text, geom)
        phi_img_pos = phi_img[:, [label]]
        phi_img_neg = phi_img[:, others]
        refs = geo.angle_distance(text_pos, text_neg, geom)

        img_pos_sim = refs.mean() - phi_img_pos
        img_neg_sims = refs - phi_img_neg
        image_term = ama_nll(img_pos_sim, img_neg_sims, cfg.tau)

        txt_pos_sim = phi_img_neg.mean(axis=1, keepdims=True) - phi_img_pos
        txt_neg_sims = phi_img_neg - refs
        text_term = ama_nll(txt_pos_sim, txt_neg_sims, cfg.tau)

        total = total + image_term + text_term
    return total


def shc_total(embeddings, label, selections, cfg, geom):
    """Hierarchy consistency: entailment plus contradiction penalties.

    Entailment terms: the slide embedding entails its regions, each region
    its own patches; per class, slide-level text entails region-level text
    and region-level text entails patch-level text; the label-class text
    entails the selected image embeddings at every level. Contradiction
    terms: wrong-class text contradicts the same image embeddings. Each
    term is the mean over its pair set, terms are summed.
    """
    parts = []

    regions = embeddings.regions
    parts.append(_ent_matrix(embeddings.slide, regions, cfg, geom).mean())

    patch_parts = []
    for r, (start, stop) in enumerate(embeddings.region_slices):
        region = geo.select(regions, [r])
        patches = geo.select(embeddings.patches, np.arange(start, stop))
        patch_parts.append(_ent_matrix(region, patches, cfg, geom))
    parts.append(ad.concat(patch_parts, axis=1).mean())

    n_classes = embeddings.text[HierarchyLevel.SLIDE].count
    diag = (np.arange(n_classes), np.arange(n_classes))
    for upper, lower in (
        (HierarchyLevel.SLIDE, HierarchyLevel.REGION),
        (HierarchyLevel.REGION, HierarchyLevel.PATCH),
    ):
        chain = _ent_matrix(
            embeddings.text[upper], embeddings.text[lower], cfg, geom
        )
        parts.append(chain[diag].mean())

    image_sets = _image_sets(embeddings, selections)
    others = [c for c in range(n_classes) if c != label]
    for level in _LEVELS:
        image = image_sets[level]
        if image.count == 0:
            log.debug("no selected embeddings at %s, level skipped", level.name)
            continue
        text_pos = geo.select(embeddings.text[level], [label])
        parts.append(_ent_matrix(text_pos, image, cfg, geom).mean())
        if others:
            text_neg = geo.select(embeddings.text[level], others)
            parts.append(_con_matrix(text_neg, image, cfg, geom).mean())

    total = ad.Tensor(0.0)
    for part in parts:
        total = total + part
    return total


def cls_loss(embeddings, label, cfg, geom):
    """Cross-entropy over softmax of negative slide-to-text geodesics."""
    distances = geo.geodesic(
        embeddings.slide, embeddings.text[HierarchyLevel.SLIDE], geom
    )
    return cls_nll(distances.reshape(-1), label)


def total_loss(embeddings, label, selections, cfg, geom):
    """L_cls + lambda_a * L_ama + lambda_s * L_shc for one slide."""
    total = cls_loss(embeddings, label, cfg, geom)
    if cfg.lambda_a != 0.0:
        total = total + ama_total(embeddings, label, selections, cfg, geom) * cfg.lambda_a
    if cfg.lambda_s != 0.0:
        total = total + shc_total(embeddings, label, selections, cfg, geom) * cfg.lambda_s
    return total
