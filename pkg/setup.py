"""Build script: compiles the optional accelerated stepper kernel.

The package is fully functional without the extension (a pure-NumPy kernel
is selected at import time), so a failed compile downgrades to a warning
instead of aborting the install.
"""

import warnings

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the Cython kernel if possible, fall back silently otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or toolchain missing
            warnings.warn(f"compiled stepper kernel unavailable, using pure-Python fallback: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"failed to build {ext.name}, using pure-Python fallback: {exc}")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools.extension import Extension
    except ImportError:
        return []
    ext = Extension(
        "waningsim._stepper_cy",
        sources=["src/waningsim/_stepper_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
