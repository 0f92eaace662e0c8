"""Build script for the optional compiled noise kernels.

The package works without the extension: softbits._kernels falls back to a
vectorized numpy implementation of the same generator. Building the extension
just makes bulk noise generation faster (see benchmarks/bench_noise.py).
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("softbits._kernels._core", ["src/softbits/_kernels/_core.pyx"])],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
