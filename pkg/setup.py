"""Build the optional compiled MI kernel.

A failed extension build is not fatal: the package falls back to the numpy
kernel at import time.
"""

import os
import sys

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:  # no Cython: pure-Python install
    cythonize = None


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:
            print(f"warning: compiled kernel not built ({exc}); using numpy fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: {ext.name} not built ({exc}); using numpy fallback", file=sys.stderr)


openmp = [] if os.environ.get("CELLSYNC_NO_OPENMP") else ["-fopenmp"]

extensions = [
    Extension(
        "cellsync._mikernel",
        ["src/cellsync/_mikernel.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", *openmp],
        extra_link_args=openmp,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}) if cythonize else [],
    cmdclass={"build_ext": OptionalBuildExt},
)
