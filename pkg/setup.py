import os

import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: without Cython (or with
# IKSHANA_NO_EXTENSION=1) the package installs pure-Python and the numpy
# backend is selected at import time.
ext_modules = []
if not os.environ.get("IKSHANA_NO_EXTENSION"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "ikshana.kernels.conv_cython",
                    sources=["src/ikshana/kernels/conv_cython.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-fopenmp"],
                    extra_link_args=["-fopenmp"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
