import os

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

compile_args = ["-O3"]
if not os.environ.get("GRADNORM_PORTABLE"):
    compile_args.append("-march=native")

extensions = [
    Extension(
        "gradnorm._kernels",
        ["src/gradnorm/_kernels.pyx"],
        include_dirs=[numpy.get_include(), "src/gradnorm"],
        extra_compile_args=compile_args,
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
