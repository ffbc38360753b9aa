"""Build script for the optional compiled kernels.

The extension is marked optional: if it fails to compile, the package
falls back to the numpy implementation in ``heatvar._pykernels``.
"""

import platform

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup



def _simd_flags():
    # built for the local machine; skip AVX2 where the CPU lacks it
    if platform.machine() not in ("x86_64", "AMD64"):
        return []
    try:
        with open("/proc/cpuinfo") as fh:
            return ["-mavx2"] if " avx2" in fh.read() else []
    except OSError:
        return []


extensions = [
    Extension(
        "heatvar._ckernels",
        ["src/heatvar/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        # no -ffast-math: the kernels rely on strict IEEE evaluation order
        extra_compile_args=["-O3", "-ffp-contract=off", *_simd_flags()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
