"""Backend selection and kernel equivalence between compiled core and numpy."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from hypermil import _kernels_numpy, backend
from hypermil.errors import ConfigError

_HAS_COMPILED = "compiled" in backend.available()

needs_compiled = pytest.mark.skipif(
    not _HAS_COMPILED, reason="compiled core not built"
)


@pytest.fixture
def restore_backend():
    prev = backend.name()
    yield
    backend.use(prev)


def test_available_always_includes_python():
    names = backend.available()
    assert "python" in names
    assert names == sorted(set(names), key=names.index)


def test_select_rejects_unknown():
    with pytest.raises(ConfigError):
        backend._select("fortran")


def test_use_python(restore_backend):
    mod = backend.use("python")
    assert mod.NAME == "python"
    assert backend.name() == "python"
    assert backend.active is _kernels_numpy


@needs_compiled
def test_use_compiled(restore_backend):
    mod = backend.use("compiled")
    assert mod.NAME == "compiled"
    assert backend.name() == "compiled"


def test_auto_and_empty_select_something():
    assert backend._select("").NAME in ("compiled", "python")
    assert backend._select("auto").NAME in ("compiled", "python")


# -- kernel equivalence --------------------------------------------------------

_UNARY = {
    "exp": (-20.0, 20.0),
    "log": (1e-8, 1e6),
    "sqrt": (0.0, 1e6),
    "tanh": (-20.0, 20.0),
    "sinh": (-5.0, 5.0),
    "cosh": (-5.0, 5.0),
    "acos": (-1.0, 1.0),
    "asin": (-1.0, 1.0),
    "acosh": (1.0, 1e3),
    "neg": (-1e3, 1e3),
}

_EXACT_UNARY = {"sqrt", "neg"}


@needs_compiled
@pytest.mark.parametrize("fn", sorted(_UNARY))
def test_unary_kernels_match_numpy(fn):
    lo, hi = _UNARY[fn]
    rng = np.random.default_rng(11)
    x = rng.uniform(lo, hi, size=(7, 13))
    core = backend._load_compiled()
    got = getattr(core, fn)(x)
    want = getattr(_kernels_numpy, fn)(x)
    assert got.dtype == np.float64
    assert got.shape == want.shape
    if fn in _EXACT_UNARY:
        assert_array_equal(got, want)
    else:
        # libm and numpy's vectorized transcendentals legitimately differ by
        # an ulp or two; anything larger is a real kernel bug
        assert_allclose(got, want, rtol=1e-14, atol=1e-300)


@needs_compiled
@pytest.mark.parametrize("fn", ["add", "sub", "mul", "div", "maximum"])
def test_binary_kernels_exact(fn):
    rng = np.random.default_rng(12)
    a = rng.normal(size=(5, 6))
    b = rng.normal(size=(5, 6)) + 2.0
    core = backend._load_compiled()
    assert_array_equal(getattr(core, fn)(a, b), getattr(_kernels_numpy, fn)(a, b))


@needs_compiled
@pytest.mark.parametrize(
    "fn,s", [("adds", 1.5), ("subs", 2.5), ("rsubs", 3.0),
             ("muls", -2.0), ("divs", 4.0), ("rdivs", 2.0), ("maxs", 0.1)]
)
def test_scalar_kernels_exact(fn, s):
    rng = np.random.default_rng(13)
    a = rng.normal(size=(4, 9)) + 3.0
    core = backend._load_compiled()
    assert_array_equal(getattr(core, fn)(a, s), getattr(_kernels_numpy, fn)(a, s))


@needs_compiled
def test_clip_kernel_exact():
    rng = np.random.default_rng(14)
    a = rng.normal(size=100) * 3.0
    core = backend._load_compiled()
    assert_array_equal(core.clip(a, -1.0, 1.0), np.clip(a, -1.0, 1.0))
    assert_array_equal(core.clip(a, -np.inf, 0.5), np.clip(a, -np.inf, 0.5))


@needs_compiled
def test_has_nan():
    core = backend._load_compiled()
    assert not core.has_nan(np.ones(5))
    assert core.has_nan(np.array([1.0, np.nan]))
    assert not core.has_nan(np.array([np.inf, -np.inf]))


@needs_compiled
def test_kernels_handle_noncontiguous_and_0d():
    core = backend._load_compiled()
    base = np.arange(24.0).reshape(4, 6)
    views = [base.T, base[::2, 1::2], np.float64(2.0), np.array(3.0)]
    for v in views:
        assert_allclose(core.exp(v), np.exp(v), rtol=1e-14)
    a, b = base.T, (base + 1.0).T
    assert_array_equal(core.add(a, b), a + b)


@needs_compiled
def test_kernels_return_fresh_arrays():
    core = backend._load_compiled()
    x = np.ones(4)
    out = core.neg(x)
    out[0] = 42.0
    assert x[0] == 1.0


def test_full_model_run_matches_across_backends(restore_backend):
    # one gradient step on each backend: parameters must agree to near
    # round-off (transcendental kernels differ by an ulp, so not bitwise)
    from hypermil.data import SyntheticSpec, generate
    from hypermil.model import ModelDims, embed_slide, init_params
    from hypermil import geometry as geo
    from hypermil import losses as ls
    from hypermil.training import select_top_k

    bundle = generate(SyntheticSpec(
        n_classes=2, slides_per_class=2, n_regions=2, n_patches=4, d_in=8,
        n_sites=2, seed=3))
    geom = geo.GeometryConfig(curvature=1.0, dim=4)
    cfg = ls.LossConfig()
    results = {}
    for name in backend.available():
        backend.use(name)
        params = init_params(
            ModelDims(d_in=8, k=4, n_classes=2), seed=5,
            base_vectors=bundle.class_vectors)
        bag = bundle.bags[0]
        sets = embed_slide(bag, params, geom)
        sel = select_top_k(bag, bundle.class_vectors, bag.label, cfg.top_k)
        loss = ls.total_loss(sets, bag.label, sel, cfg, geom)
        loss.backward()
        results[name] = {
            "loss": loss.item(),
            "grads": {n: t.grad.copy() for n, t in params.trainable()
                      if t.grad is not None},
        }
    if len(results) < 2:
        pytest.skip("only one backend available")
    a, b = results["compiled"], results["python"]
    assert a["loss"] == pytest.approx(b["loss"], rel=1e-12)
    assert a["grads"].keys() == b["grads"].keys()
    for key in a["grads"]:
        assert_allclose(a["grads"][key], b["grads"][key], rtol=1e-9,
                        atol=1e-12, err_msg=key)
