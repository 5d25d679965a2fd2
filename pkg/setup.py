"""Build the optional compiled tree kernel.

If Cython or a C compiler is unavailable the package still installs and the
pure-Python kernel is used at import time.
"""

import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("MLREACT_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext = Extension(
            "mlreact.gbrt._tree_kernel",
            ["src/mlreact/gbrt/_tree_kernel.pyx"],
            include_dirs=[np.get_include()],
            # keep floating-point evaluation order identical to the numpy path
            extra_compile_args=["-O2", "-ffp-contract=off"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"mlreact: building without compiled kernel ({exc})", file=sys.stderr)
        ext_modules = []

setup(ext_modules=ext_modules)
