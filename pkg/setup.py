import os

import numpy as np
from setuptools import Extension, setup

# Building the extension is optional: cebound falls back to numpy kernels.
ext_modules = []
if os.environ.get("CEBOUND_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "cebound._kernels",
                    ["src/cebound/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
