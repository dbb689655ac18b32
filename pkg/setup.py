"""Build script: compiles the tree-sampling hot kernel as a C extension.

The package works without the extension (a pure-Python walker is selected
at import time), so the build degrades gracefully when Cython is missing.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    have_cython = True
except ImportError:
    have_cython = False

ext_modules = []
if have_cython:
    ext_modules = cythonize(
        [
            Extension(
                "branchpde._kernels",
                ["src/branchpde/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
