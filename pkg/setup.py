import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "crossgad._scatter",
        ["src/crossgad/_scatter.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

# The extension is an accelerator only; the package runs on the numpy
# fallback when Cython is unavailable or CROSSGAD_SKIP_EXT is set.
if cythonize is None or os.environ.get("CROSSGAD_SKIP_EXT"):
    ext_modules = []
else:
    ext_modules = cythonize(
        extensions, compiler_directives={"language_level": "3"}
    )

setup(ext_modules=ext_modules)
