"""Build shim: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so any compilation failure downgrades to a pure-Python install
instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/dsfc/_kernels.pyx"],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": 3,
        },
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"dsfc: skipping compiled kernels ({exc}); pure-Python fallback will be used")

setup(ext_modules=ext_modules)
