import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "gridtrack.lp._kernel",
    ["src/gridtrack/lp/_kernel.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O2"],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level=3))
