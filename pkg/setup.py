import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; petalsearch.kernels falls back to numpy
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "petalsearch._ckernels",
                ["src/petalsearch/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
