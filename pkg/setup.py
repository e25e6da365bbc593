"""Build script: compiles the optional Cython core.

The package works without the extension (a pure-Python twin is selected
at import time), so a failed extension build is downgraded to a warning.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/feedstation/_core_cy.pyx"],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    warnings.warn(f"Cython core not built, falling back to pure Python: {exc}")

setup(ext_modules=ext_modules)
