import os

from setuptools import setup

ext_modules = []
if os.environ.get("RACESIM_NO_EXT", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "racesim._ckernels",
                    ["src/racesim/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # no FMA contraction: keeps results bit-identical to the NumPy fallback
                    extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
