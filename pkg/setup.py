import numpy as np
from setuptools import Extension, setup

from Cython.Build import cythonize

extensions = [
    Extension(
        "ppdmkit._bcd",
        sources=["src/ppdmkit/_bcd.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": 3}))
