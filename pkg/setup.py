import os

from setuptools import setup

_PYX = os.path.join("src", "uncertube", "_tubekernel.pyx")

ext_modules = None
if os.path.exists(_PYX) and not os.environ.get("UT_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools.extension import Extension

        ext_modules = cythonize(
            [Extension("uncertube._tubekernel", sources=[_PYX])],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        # No Cython available: the package falls back to the numpy kernel.
        ext_modules = None

setup(ext_modules=ext_modules)
