import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    if not os.path.exists("src/tracklearn/autodiff/_ctape.pyx"):
        raise ImportError("extension source not present")
    ext_modules = cythonize(
        [
            Extension(
                "tracklearn.autodiff._ctape",
                ["src/tracklearn/autodiff/_ctape.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    # No Cython at build time: ship pure Python, the tape falls back at import.
    ext_modules = []

setup(ext_modules=ext_modules)
