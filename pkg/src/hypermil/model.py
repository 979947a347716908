"""Trainable components and the per-slide embedding pipeline.

A slide arrives as raw patch features grouped into regions. The image
adaptor (a two-layer MLP) maps every patch into the tangent space at the
origin; gated-attention aggregators then pool patches into region features
and regions into a slide feature, still in the tangent space, and each level
is pushed onto the manifold with the exponential map. Class text features
are a frozen base vector per class plus a learnable offset per (class,
level), passed through their own adaptor and mapped the same way.

Aggregation happens on tangent features because a weighted sum of manifold
points does not stay on the manifold; only the per-level outputs are mapped.

Checkpoints are a little-endian binary table of named float64 arrays
(magic "HPCK1"), written atomically and read back bit-exactly.
"""

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .errors import (
    BadMagicError,
    ConfigError,
    EmptyBagError,
    ShapeError,
    TruncatedPayloadError,
    VersionError,
)
from .fileio import atomic_write_bytes

_CHECKPOINT_MAGIC = b"HPCK1"
_CHECKPOINT_VERSION = 1


class HierarchyLevel(Enum):
    PATCH = 0
    REGION = 1
    SLIDE = 2

    @property
    def subordinate(self):
        return {
            HierarchyLevel.SLIDE: HierarchyLevel.REGION,
            HierarchyLevel.REGION: HierarchyLevel.PATCH,
            HierarchyLevel.PATCH: None,
        }[self]

    @property
    def superordinate(self):
        return {
            HierarchyLevel.SLIDE: None,
            HierarchyLevel.REGION: HierarchyLevel.SLIDE,
            HierarchyLevel.PATCH: HierarchyLevel.REGION,
        }[self]


@dataclass(frozen=True)
class ModelDims:
    d_in: int
    k: int = 16
    d_hidden: int = 0  # 0 means d_in
    n_classes: int = 2
    shared_aggregators: bool = False

    def __post_init__(self):
        if self.d_in < 1 or self.k < 2 or self.n_classes < 1 or self.d_hidden < 0:
            raise ConfigError(f"invalid model dimensions: {self}")

    @property
    def hidden(self):
        return self.d_hidden if self.d_hidden else self.d_in


class Mlp:
    """Two-layer tanh MLP applied to rows."""

    def __init__(self, w1, b1, w2, b2):
        self.w1 = w1
        self.b1 = b1
        self.w2 = w2
        self.b2 = b2

    def __call__(self, x):
        hidden = ad.tanh(x @ self.w1.T + self.b1)
        return hidden @ self.w2.T + self.b2


class AttentionAggregator:
    """Gated-attention weights over subordinate rows: softmax(w2' tanh(w1 f'))."""

    def __init__(self, w1, w2):
        self.w1 = w1
        self.w2 = w2


class ClassSemanticsTable:
    """Frozen per-class base vectors plus learnable per-(class, level) offsets."""

    def __init__(self, base, offsets):
        self.base = base        # [C x D_in], never receives gradient
        self.offsets = offsets  # [C x 3 x D_in]

    def level_features(self, level):
        return self.base + self.offsets[:, level.value]


@dataclass
class ModelParams:
    adaptor_i: Mlp
    adaptor_t: Mlp
    agg_region: AttentionAggregator  # patches -> region
    agg_slide: AttentionAggregator   # regions -> slide
    semantics: ClassSemanticsTable
    dims: ModelDims

    def named(self):
        """All parameter tensors, including the frozen base vectors."""
        pairs = [
            ("adaptor_i.w1", self.adaptor_i.w1),
            ("adaptor_i.b1", self.adaptor_i.b1),
            ("adaptor_i.w2", self.adaptor_i.w2),
            ("adaptor_i.b2", self.adaptor_i.b2),
            ("adaptor_t.w1", self.adaptor_t.w1),
            ("adaptor_t.b1", self.adaptor_t.b1),
            ("adaptor_t.w2", self.adaptor_t.w2),
            ("adaptor_t.b2", self.adaptor_t.b2),
            ("agg_region.w1", self.agg_region.w1),
            ("agg_region.w2", self.agg_region.w2),
        ]
        if not self.dims.shared_aggregators:
            pairs += [
                ("agg_slide.w1", self.agg_slide.w1),
                ("agg_slide.w2", self.agg_slide.w2),
            ]
        pairs += [
            ("semantics.base", self.semantics.base),
            ("semantics.offsets", self.semantics.offsets),
        ]
        return pairs

    def trainable(self):
        return [(n, t) for n, t in self.named() if t.requires_grad]

    def zero_grads(self):
        for _, t in self.named():
            t.grad = None

    def copy(self):
        arrays = {n: t.data.copy() for n, t in self.named()}
        return params_from_arrays(arrays, self.dims)


def _xavier(rng, fan_out, fan_in):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_out, fan_in))


def _param(arr):
    return ad.Tensor(arr, requires_grad=True)


# scale of the adaptor output layer at init: embeddings start close to the
# origin, inside the maximal-aperture region, so the exponential cone
# penalties begin moderate instead of astronomically steep
_INIT_RADIUS = 0.1


def _init_mlp(rng, d_in, hidden, k):
    w1 = _param(_xavier(rng, hidden, d_in))
    b1 = _param(np.zeros((1, hidden)))
    w2 = _param(_INIT_RADIUS * _xavier(rng, k, hidden))
    # a constant bias in one output coordinate keeps the initial embeddings
    # strictly off the origin, where the exterior angle is undefined
    b2 = np.zeros((1, k))
    b2[0, 0] = _INIT_RADIUS
    return Mlp(w1, b1, w2, _param(b2))


def _init_aggregator(rng, k):
    d4 = max(1, k // 4)
    return AttentionAggregator(
        _param(_xavier(rng, d4, k)), _param(_xavier(rng, d4, 1))
    )


def init_params(dims, seed, base_vectors=None):
    """Fresh parameters, deterministic in (dims, seed, base_vectors)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    adaptor_i = _init_mlp(rng, dims.d_in, dims.hidden, dims.k)
    adaptor_t = _init_mlp(rng, dims.d_in, dims.hidden, dims.k)
    agg_region = _init_aggregator(rng, dims.k)
    agg_slide = agg_region if dims.shared_aggregators else _init_aggregator(rng, dims.k)
    if base_vectors is None:
        base = rng.standard_normal((dims.n_classes, dims.d_in))
        base /= np.linalg.norm(base, axis=1, keepdims=True)
    else:
        base = np.asarray(base_vectors, dtype=np.float64)
        if base.shape != (dims.n_classes, dims.d_in):
            raise ShapeError(
                f"base vectors have shape {base.shape}, "
                f"expected {(dims.n_classes, dims.d_in)}"
            )
    offsets = _param(0.1 * rng.standard_normal((dims.n_classes, 3, dims.d_in)))
    semantics = ClassSemanticsTable(ad.Tensor(base), offsets)
    return ModelParams(adaptor_i, adaptor_t, agg_region, agg_slide, semantics, dims)


def params_from_arrays(arrays, dims):
    def p(name):
        return _param(arrays[name])

    adaptor_i = Mlp(p("adaptor_i.w1"), p("adaptor_i.b1"),
                    p("adaptor_i.w2"), p("adaptor_i.b2"))
    adaptor_t = Mlp(p("adaptor_t.w1"), p("adaptor_t.b1"),
                    p("adaptor_t.w2"), p("adaptor_t.b2"))
    agg_region = AttentionAggregator(p("agg_region.w1"), p("agg_region.w2"))
    if dims.shared_aggregators:
        agg_slide = agg_region
    else:
        agg_slide = AttentionAggregator(p("agg_slide.w1"), p("agg_slide.w2"))
    semantics = ClassSemanticsTable(
        ad.Tensor(arrays["semantics.base"]), p("semantics.offsets")
    )
    return ModelParams(adaptor_i, adaptor_t, agg_region, agg_slide, semantics, dims)


# -- forward pipeline ---------------------------------------------------------


def attention_weights(features, agg):
    """The gating distribution over rows; nonnegative, sums to one."""
    if features.shape[0] == 0:
        raise EmptyBagError("cannot aggregate an empty set of features")
    scores = agg.w2.T @ ad.tanh(agg.w1 @ features.T)  # [1 x N]
    m = scores.max(axis=1, keepdims=True)
    e = ad.exp(scores - m)
    return e / e.sum(axis=1, keepdims=True)


def aggregate(features, agg):
    """Attention-weighted sum of rows, a [1 x D] tangent feature."""
    return attention_weights(features, agg) @ features


@dataclass
class EmbeddingSet:
    patches: geo.Points            # [sum N_p]
    regions: geo.Points            # [N_r]
    slide: geo.Points              # [1]
    text: dict                     # HierarchyLevel -> Points [N_C]
    region_slices: list            # patch row range per region


def embed_text(params, geom):
    """Per-class text embeddings at each level, independent of any bag."""
    # all (level, class) rows share one adaptor pass and one map
    feats = ad.concat(
        [params.semantics.level_features(level) for level in HierarchyLevel],
        axis=0,
    )
    points = geo.exp_map_origin(params.adaptor_t(feats), geom)
    n = params.dims.n_classes
    return {
        level: geo.select(points, np.arange(i * n, (i + 1) * n))
        for i, level in enumerate(HierarchyLevel)
    }


def embed_slide(bag, params, geom):
    """Hyperbolic embeddings of one slide at all levels plus class text."""
    if not bag.regions:
        raise EmptyBagError(f"slide {bag.slide_id} has no regions")
    counts = []
    for r, region in enumerate(bag.regions):
        if region.shape[0] == 0:
            raise EmptyBagError(f"slide {bag.slide_id} region {r} has no patches")
        if region.shape[1] != params.dims.d_in:
            raise ShapeError(
                f"slide {bag.slide_id} features have dimension "
                f"{region.shape[1]}, model expects {params.dims.d_in}"
            )
        counts.append(region.shape[0])

    raw = ad.Tensor(np.concatenate([np.asarray(r, dtype=np.float64)
                                    for r in bag.regions], axis=0))
    patch_tan = params.adaptor_i(raw)

    region_slices = []
    start = 0
    region_rows = []
    for n in counts:
        region_slices.append((start, start + n))
        region_rows.append(aggregate(patch_tan[start:start + n], params.agg_region))
        start += n
    region_tan = ad.concat(region_rows, axis=0)
    slide_tan = aggregate(region_tan, params.agg_slide)

    return EmbeddingSet(
        patches=geo.exp_map_origin(patch_tan, geom),
        regions=geo.exp_map_origin(region_tan, geom),
        slide=geo.exp_map_origin(slide_tan, geom),
        text=embed_text(params, geom),
        region_slices=region_slices,
    )


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(params, path, meta=None):
    """Write named parameter arrays plus meta.* scalars; atomic and bit-exact."""
    records = {name: t.data for name, t in params.named()}
    records["meta.d_in"] = np.asarray(float(params.dims.d_in))
    records["meta.k"] = np.asarray(float(params.dims.k))
    records["meta.d_hidden"] = np.asarray(float(params.dims.d_hidden))
    records["meta.n_classes"] = np.asarray(float(params.dims.n_classes))
    records["meta.shared_aggregators"] = np.asarray(
        float(params.dims.shared_aggregators)
    )
    for key, value in (meta or {}).items():
        records[f"meta.{key}"] = np.asarray(float(value))
    chunks = [_CHECKPOINT_MAGIC, struct.pack("<I", _CHECKPOINT_VERSION)]
    for name in sorted(records):
        arr = np.ascontiguousarray(records[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def load_checkpoint(path):
    """Read a checkpoint back into {name: array}."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_CHECKPOINT_MAGIC) or not blob.startswith(_CHECKPOINT_MAGIC):
        raise BadMagicError(f"{path} is not a parameter checkpoint")
    pos = len(_CHECKPOINT_MAGIC)

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedPayloadError(f"{path} ends inside {what}")
        piece = blob[pos:pos + n]
        pos += n
        return piece

    (version,) = struct.unpack("<I", take(4, "the version field"))
    if version != _CHECKPOINT_VERSION:
        raise VersionError(
            f"{path} has checkpoint version {version}, "
            f"expected {_CHECKPOINT_VERSION}"
        )
    records = {}
    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4, "a record header"))
        name = take(name_len, "a record name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "a record rank"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "record extents"))
        count = 1
        for extent in shape:
            count *= extent
        data = take(8 * count, f"the payload of {name}")
        records[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    return records


def params_from_checkpoint(records):
    """Rebuild ModelParams (and leftover meta scalars) from checkpoint records."""
    dims = ModelDims(
        d_in=int(records["meta.d_in"].item()),
        k=int(records["meta.k"].item()),
        d_hidden=int(records["meta.d_hidden"].item()),
        n_classes=int(records["meta.n_classes"].item()),
        shared_aggregators=bool(records["meta.shared_aggregators"].item()),
    )
    meta = {
        name[len("meta."):]: arr.item()
        for name, arr in records.items()
        if name.startswith("meta.")
    }
    arrays = {n: a for n, a in records.items() if not n.startswith("meta.")}
    return params_from_arrays(arrays, dims), meta
