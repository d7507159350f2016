"""Build script: compiles the optional k-NN statistics extension.

The package works without the extension (a NumPy fallback is selected at
import time); the build is skipped gracefully if Cython or a C toolchain
is unavailable.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "featuregate.infotheory._kernels_cy",
                ["src/featuregate/infotheory/_kernels_cy.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
