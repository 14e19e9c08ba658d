import os

import numpy as np
from setuptools import Extension, setup

# MCLSEARCH_PORTABLE=1 drops -march=native for binaries meant for other machines
compile_args = ["-O3"]
if os.environ.get("MCLSEARCH_PORTABLE", "") in ("", "0"):
    compile_args.append("-march=native")

ext_modules = []
if os.environ.get("MCLSEARCH_NO_EXT", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "mclsearch.kernels._conv",
                    ["src/mclsearch/kernels/_conv.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=compile_args,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
