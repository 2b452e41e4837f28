"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension; ffrsim._kernels
falls back to pure-Python implementations when the compiled module is
missing. Set FFRSIM_SKIP_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FFRSIM_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "ffrsim._kernels._core",
                    ["src/ffrsim/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
