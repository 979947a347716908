"""Synthetic feature bags, the bundle file format, and site-based splits.

The generator mimics frozen-encoder output statistics: each class has a
unit-norm prototype direction, all pairs at the same controlled angle;
slides draw region prototypes around their class prototype, patches scatter
around their region prototype, and the complement of the "purity" fraction
is drawn around a shared background direction (non-tumor tissue). Slides
are assigned round-robin to sites; each site adds its mean shift to the
background patches, which is what separates in-domain from out-of-domain
evaluation.

Bundles are a payload/manifest pair. The payload is little-endian binary:
magic "HPFB1", version u32, total data bytes u64, then the slides' patch
matrices as row-major float32 in manifest order. The manifest is JSON next
to it (payload path + ".manifest.json") holding the dimension, class names,
the frozen class base vectors, and per slide {id, label, site, patch counts
per region, byte offset into the data section}. Bad magic, a version
mismatch, a payload shorter than its own header declares, and a
manifest/payload length disagreement raise four distinct errors.
"""

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    PayloadLengthError,
    SplitError,
    TruncatedPayloadError,
    VersionError,
)
from .fileio import atomic_write_bytes, atomic_write_text

_BUNDLE_MAGIC = b"HPFB1"
_BUNDLE_VERSION = 1
_HEADER = struct.Struct("<IQ")  # version, total data bytes


@dataclass
class FeatureBag:
    slide_id: str
    label: int
    site: str
    regions: list  # [N_p x D_in] float32 arrays


@dataclass
class Bundle:
    bags: list
    class_vectors: np.ndarray  # [N_C x D_in] frozen base directions
    class_names: list
    dim: int


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 3
    slides_per_class: int = 30
    n_regions: int = 4
    n_patches: int = 16
    d_in: int = 32
    sigma_class: float = 1.0
    sigma_region: float = 0.1
    sigma_patch: float = 0.1
    purity: float = 0.3
    n_sites: int = 6
    sigma_site: float = 0.25
    seed: int = 7

    def __post_init__(self):
        counts = (self.n_classes, self.slides_per_class, self.n_regions,
                  self.n_patches, self.d_in, self.n_sites)
        if any(c < 1 for c in counts):
            raise ConfigError(f"all counts must be at least 1: {self}")
        if not 0 < self.purity <= 1:
            raise ConfigError(f"purity must be in (0, 1], got {self.purity}")
        if min(self.sigma_class, self.sigma_region, self.sigma_patch) <= 0:
            raise ConfigError("sigma_class/sigma_region/sigma_patch must be positive")
        if self.sigma_site < 0:
            raise ConfigError(f"sigma_site must be nonnegative, got {self.sigma_site}")
        if self.d_in <= self.n_classes:
            raise ConfigError(
                f"d_in must exceed n_classes for the anchored prototype frame, "
                f"got d_in={self.d_in}, n_classes={self.n_classes}"
            )


def _unit_rows(m):
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def generate(spec):
    """Deterministic synthetic bundle for the given spec."""
    n_slides = spec.n_classes * spec.slides_per_class
    seeds = np.random.SeedSequence(spec.seed).spawn(2 + n_slides)
    rng = np.random.default_rng(seeds[0])

    # classes share a common stem (the anchor) plus equal-norm offsets along
    # mutually orthogonal directions, so every prototype pair sits at the same
    # angle acos(1 / (1 + sigma_class^2)). small sigma_class means subtypes
    # that differ subtly on a shared morphology, large means near-orthogonal
    # concepts; no seed-lucky weak pair can dominate the task
    frame, _ = np.linalg.qr(rng.standard_normal((spec.d_in, spec.n_classes + 1)))
    anchor = frame[:, 0]
    offsets = frame[:, 1:].T
    prototypes = _unit_rows(anchor + spec.sigma_class * offsets)
    # the background is the shared anchor direction: uninformative tissue whose
    # raw similarity to every class concept is comparable, so naive
    # similarity-based patch selection picks it up for every class alike
    background = anchor

    # site effects model scanner/stain variation independent of tumor
    # content. batch effects in practice are low-rank: a couple of shared
    # technical axes (stain density, scanner color response) with each site
    # at its own operating point. we draw two shared axes orthogonal to the
    # class semantics (prototypes and background), so raw class geometry is
    # untouched while learned feature maps still face a real domain gap
    site_rng = np.random.default_rng(seeds[1])
    semantic = np.concatenate([prototypes, background[None, :]], axis=0)
    basis, _ = np.linalg.qr(semantic.T)
    axes = site_rng.standard_normal((spec.d_in, 2))
    axes -= basis @ (basis.T @ axes)
    axes, _ = np.linalg.qr(axes)
    coords = site_rng.standard_normal((spec.n_sites, 2))
    site_shift = spec.sigma_site * coords @ axes.T

    n_disc = max(1, int(round(spec.purity * spec.n_patches)))
    bags = []
    index = 0
    for c in range(spec.n_classes):
        for _ in range(spec.slides_per_class):
            slide_rng = np.random.default_rng(seeds[2 + index])
            site = index % spec.n_sites
            shift = site_shift[site]
            regions = []
            for _ in range(spec.n_regions):
                proto = prototypes[c] + spec.sigma_region * slide_rng.standard_normal(
                    spec.d_in
                )
                patches = np.empty((spec.n_patches, spec.d_in))
                which = slide_rng.permutation(spec.n_patches)
                disc_rows = which[:n_disc]
                back_rows = which[n_disc:]
                patches[disc_rows] = proto + spec.sigma_patch * slide_rng.standard_normal(
                    (len(disc_rows), spec.d_in)
                )
                # site effects land on the background tissue: prep artifacts
                # and stroma staining vary by site, while the discriminative
                # morphology is comparatively site-stable
                patches[back_rows] = background + shift + spec.sigma_patch * slide_rng.standard_normal(
                    (len(back_rows), spec.d_in)
                )
                regions.append(patches.astype(np.float32))
            bags.append(
                FeatureBag(
                    slide_id=f"slide-{index:04d}",
                    label=c,
                    site=f"site-{site}",
                    regions=regions,
                )
            )
            index += 1
    names = [f"class-{c}" for c in range(spec.n_classes)]
    return Bundle(bags=bags, class_vectors=prototypes, class_names=names,
                  dim=spec.d_in)


# -- bundle files -------------------------------------------------------------


def write_bundle(bundle, path):
    """Write payload and manifest; both atomically."""
    chunks = []
    slides = []
    offset = 0
    for bag in bundle.bags:
        counts = []
        for region in bag.regions:
            arr = np.ascontiguousarray(region, dtype="<f4")
            if arr.ndim != 2 or arr.shape[1] != bundle.dim:
                raise ConfigError(
                    f"slide {bag.slide_id}: region shape {arr.shape} does not "
                    f"match bundle dimension {bundle.dim}"
                )
            counts.append(arr.shape[0])
            chunks.append(arr.tobytes())
        slides.append(
            {
                "id": bag.slide_id,
                "label": int(bag.label),
                "site": bag.site,
                "patch_counts": counts,
                "offset": offset,
            }
        )
        offset += sum(counts) * bundle.dim * 4
    data = b"".join(chunks)
    payload = _BUNDLE_MAGIC + _HEADER.pack(_BUNDLE_VERSION, len(data)) + data
    manifest = {
        "format": "HPFB1",
        "version": _BUNDLE_VERSION,
        "dim": int(bundle.dim),
        "classes": list(bundle.class_names),
        "class_vectors": [list(map(float, row)) for row in bundle.class_vectors],
        "slides": slides,
    }
    atomic_write_bytes(path, payload)
    atomic_write_text(manifest_path(path), json.dumps(manifest, sort_keys=True))


def manifest_path(path):
    return f"{path}.manifest.json"


def read_bundle(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_BUNDLE_MAGIC):
        raise BadMagicError(f"{path} is not a feature bundle")
    header_end = len(_BUNDLE_MAGIC) + _HEADER.size
    if len(blob) < header_end:
        raise TruncatedPayloadError(f"{path} ends inside the header")
    version, declared = _HEADER.unpack(blob[len(_BUNDLE_MAGIC):header_end])
    if version != _BUNDLE_VERSION:
        raise VersionError(
            f"{path} has bundle version {version}, expected {_BUNDLE_VERSION}"
        )
    data = blob[header_end:]
    if len(data) < declared:
        raise TruncatedPayloadError(
            f"{path} holds {len(data)} payload bytes but declares {declared}"
        )
    if len(data) > declared:
        raise PayloadLengthError(
            f"{path} holds {len(data) - declared} bytes beyond its declared length"
        )

    with open(manifest_path(path), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "HPFB1" or manifest.get("version") != version:
        raise VersionError(
            f"{manifest_path(path)} does not match payload version {version}"
        )
    dim = int(manifest["dim"])
    bags = []
    offset = 0
    for entry in manifest["slides"]:
        if entry["offset"] != offset:
            raise PayloadLengthError(
                f"{path}: slide {entry['id']} declares offset {entry['offset']}, "
                f"expected {offset}"
            )
        regions = []
        for count in entry["patch_counts"]:
            nbytes = count * dim * 4
            if offset + nbytes > declared:
                raise PayloadLengthError(
                    f"{path}: manifest declares more patches than the payload holds"
                    f" (slide {entry['id']})"
                )
            regions.append(
                np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
                .reshape(count, dim)
                .copy()
            )
            offset += nbytes
        bags.append(
            FeatureBag(
                slide_id=entry["id"],
                label=int(entry["label"]),
                site=entry["site"],
                regions=regions,
            )
        )
    if offset != declared:
        raise PayloadLengthError(
            f"{path}: manifest accounts for {offset} bytes, payload holds {declared}"
        )
    return Bundle(
        bags=bags,
        class_vectors=np.asarray(manifest["class_vectors"], dtype=np.float64),
        class_names=list(manifest["classes"]),
        dim=dim,
    )


# -- nested site-based splits -------------------------------------------------


@dataclass(frozen=True)
class InnerSplit:
    train_ids: tuple
    val_ids: tuple
    test_ids: tuple


@dataclass(frozen=True)
class OuterFold:
    ind_sites: tuple
    ood_sites: tuple
    ood_ids: tuple
    inner: tuple  # of InnerSplit


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple
    seed: int


def make_splits(bags, n_outer, n_inner, ratios=(0.6, 0.2, 0.2), seed=0):
    """Site-disjoint outer folds with stratified Monte-Carlo inner splits.

    Fold f's sites are in-domain; every other site's slides form its
    out-of-domain test set. Within the in-domain slides, each inner split
    draws train/val/test by the given ratios per class. Everything is keyed
    by sorted slide ids and the seed, so bundle order does not matter.
    """
    if n_outer < 1 or n_inner < 1:
        raise ConfigError("n_outer and n_inner must be at least 1")
    if len(ratios) != 3 or min(ratios) <= 0 or not math.isclose(sum(ratios), 1.0):
        raise ConfigError(f"ratios must be three positive values summing to 1: {ratios}")
    by_id = {}
    for bag in bags:
        if bag.slide_id in by_id:
            raise SplitError(f"duplicate slide id {bag.slide_id}")
        by_id[bag.slide_id] = bag
    ids = sorted(by_id)
    sites = sorted({by_id[i].site for i in ids})
    if len(sites) < n_outer:
        raise SplitError(
            f"need at least {n_outer} distinct sites for {n_outer} outer folds, "
            f"got {len(sites)}"
        )
    seeds = np.random.SeedSequence(seed).spawn(1 + n_outer * n_inner)
    site_order = list(np.array(sites)[np.random.default_rng(seeds[0]).permutation(len(sites))])

    folds = []
    for outer in range(n_outer):
        ind_sites = tuple(sorted(site_order[outer::n_outer]))
        ood_sites = tuple(s for s in sites if s not in ind_sites)
        ind_ids = [i for i in ids if by_id[i].site in ind_sites]
        ood_ids = tuple(i for i in ids if by_id[i].site in ood_sites)
        classes = sorted({by_id[i].label for i in ids})
        per_class = {c: [i for i in ind_ids if by_id[i].label == c] for c in classes}
        for c in classes:
            if len(per_class[c]) < 3:
                raise SplitError(
                    f"outer fold {outer}: class {c} has {len(per_class[c])} "
                    f"in-domain slides, need at least 3 to stratify"
                )
        inner = []
        for i in range(n_inner):
            rng = np.random.default_rng(seeds[1 + outer * n_inner + i])
            train, val, test = [], [], []
            for c in classes:
                pool = list(per_class[c])
                rng.shuffle(pool)
                n = len(pool)
                n_test = max(1, int(round(ratios[2] * n)))
                n_val = max(1, int(round(ratios[1] * n)))
                n_train = n - n_val - n_test
                if n_train < 1:
                    raise SplitError(
                        f"outer fold {outer}: class {c} cannot be split "
                        f"{ratios} over {n} slides"
                    )
                train += pool[:n_train]
                val += pool[n_train:n_train + n_val]
                test += pool[n_train + n_val:]
            inner.append(
                InnerSplit(
                    train_ids=tuple(sorted(train)),
                    val_ids=tuple(sorted(val)),
                    test_ids=tuple(sorted(test)),
                )
            )
        folds.append(
            OuterFold(
                ind_sites=ind_sites,
                ood_sites=ood_sites,
                ood_ids=ood_ids,
                inner=tuple(inner),
            )
        )
    return SplitPlan(folds=tuple(folds), seed=seed)
