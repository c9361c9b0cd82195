"""Build script for the optional compiled ADMM kernel.

The package is fully functional without the extension (a pure NumPy kernel
is selected at import time), so a failed compile only costs speed.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ddpc._admm_cy",
                ["src/ddpc/_admm_cy.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
