"""Builds the optional compiled kernel core.

The package is fully functional without it; hypermil.backend falls back to
the numpy kernels when the extension is missing.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Degrade to the pure-python backend instead of failing the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            warnings.warn(f"skipping compiled kernel core: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"skipping compiled kernel core ({ext.name}): {exc}")


ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "hypermil._core",
                ["src/hypermil/_core.pyx"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # cython/numpy unavailable
    warnings.warn(f"compiled kernel core not built: {exc}")

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
