import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # numpy fallback in neatread._kernels_py is used at import time
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "neatread._kernels",
                ["src/neatread/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
