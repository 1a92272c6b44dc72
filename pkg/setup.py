"""Build script: compiles the quadrature kernel extension when Cython is available.

The package works without the extension (a NumPy fallback is selected at
import time), so the build degrades gracefully on machines without a
compiler. Set OSCIDAMP_NO_EXT=1 to skip the extension build entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("OSCIDAMP_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "oscidamp._kernels._torus",
                    ["src/oscidamp/_kernels/_torus.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
