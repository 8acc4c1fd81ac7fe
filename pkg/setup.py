import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("LFI_FORGE_NO_EXT", "") in ("", "0"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lfi_forge._core",
                ["src/lfi_forge/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
