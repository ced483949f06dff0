import os

import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: when Cython or a C compiler is missing
# the package falls back to the pure-numpy backend at import time.
ext_modules = []
try:
    if not os.path.exists("src/maskvo/_kernels/_native.pyx"):
        raise ImportError
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "maskvo._kernels._native",
                ["src/maskvo/_kernels/_native.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
