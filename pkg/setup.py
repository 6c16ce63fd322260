"""Build script for the compiled network-stepping kernel.

The extension is optional: if it fails to build or import, scnfilt falls back
to the pure-numpy loop (same results, slower). -ffp-contract=off keeps the C
arithmetic bit-identical to numpy's (no FMA contraction).
"""
import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "scnfilt._kernel",
    ["src/scnfilt/_kernel.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O2", "-ffp-contract=off"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
