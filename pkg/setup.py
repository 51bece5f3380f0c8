"""Build the optional compiled core; the package works without it."""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("IRSA_EH_NO_EXTENSION", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("irsa_eh._core", ["src/irsa_eh/_core.pyx"], include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
