"""Build script: compiles the optional similarity kernels.

The package is pure Python except for cqalink/similarity/_kernels.pyx,
which accelerates the string-similarity hot loop.  If Cython or a C
compiler is unavailable the build falls back to the pure implementation
(selected automatically at import time), so the extension is best-effort.
"""

import sys

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cqalink.similarity._kernels",
                ["src/cqalink/similarity/_kernels.pyx"],
            )
        ],
        language_level=3,
    )
except ImportError:
    print("warning: Cython not available, building without compiled kernels", file=sys.stderr)

setup(ext_modules=ext_modules)
