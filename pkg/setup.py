"""Builds the optional compiled kernel core.

The package works without it (pure-numpy fallback in synmotion.kernels.pyref);
building the extension just makes the hot loops faster on small shapes.
"""

from setuptools import setup, Extension

ext_modules = []
try:
    from Cython.Build import cythonize
    import numpy as np

    ext_modules = cythonize(
        [
            Extension(
                "synmotion.kernels.fastcore",
                ["src/synmotion/kernels/fastcore.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
