import os

import numpy
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("BNNOOD_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    name="bnnood._core",
                    sources=["src/bnnood/_core.pyx"],
                    extra_compile_args=["-O3", "-g0", "-Wno-unreachable-code"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
