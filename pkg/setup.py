"""Build script: compiles the optional Cython kernels when the toolchain allows.

Set TERRACV_NO_EXT=1 to force a pure-Python install; the package falls back
to the NumPy kernel implementations at import time when the extension is
absent.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TERRACV_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "terracv._kernels._split_cy",
                    ["src/terracv/_kernels/_split_cy.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
