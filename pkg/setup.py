import os

import numpy
from setuptools import setup
from setuptools.extension import Extension

# The compiled kernels are an optional speedup; the package falls back to
# numpy implementations when the extension is absent (see tkgcast.kernels).
# Set TKGCAST_SKIP_EXT=1 to install without compiling.
ext_modules = []
if not os.environ.get("TKGCAST_SKIP_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "tkgcast.kernels._speedups",
                ["src/tkgcast/kernels/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
