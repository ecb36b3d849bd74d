import os

from setuptools import Extension, setup


def extensions():
    # The compiled kernels are an optimization, not a requirement: the package
    # falls back to the numpy reference implementation when the extension is
    # absent (or when ECTSENS_BACKEND=python).
    if os.environ.get("ECTSENS_SKIP_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "ectsens._fastpath",
        ["src/ectsens/_fastpath.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
