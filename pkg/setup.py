"""Builds the optional compiled kernel core.

The package works without it (the numpy reference backend is selected at
import time); set AVTRACK_NO_EXT=1 to skip the extension entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("AVTRACK_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            "src/avtrack/_kernels/_core.pyx",
            compiler_directives={
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "language_level": "3",
            },
        )
        for ext in ext_modules:
            ext.include_dirs.append(np.get_include())
            ext.extra_compile_args.append("-O3")
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
