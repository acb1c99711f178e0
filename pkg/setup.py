"""Build script for the compiled kernel core.

The extension is optional: set MODREF_SKIP_EXT=1 (or build without Cython)
to install the pure-numpy package; kernels fall back at import time.
"""

import os

from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
if not os.environ.get("MODREF_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "modref._kernels._core",
                    ["src/modref/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
