"""Build script for the optional compiled ray-tracing core.

The extension is optional: when Cython or a C compiler is unavailable the
package installs without it and falls back to the numpy implementation.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("ECHOFORGE_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "echoforge._raytrace",
                    sources=["src/echoforge/_raytrace.pyx"],
                    include_dirs=[np.get_include()],
                    # bit-compatible with the numpy fallback: no FMA contraction
                    extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
