from setuptools import Extension, setup

import numpy
from Cython.Build import cythonize

extensions = [
    Extension(
        "dexprior.ndp._engine_cy",
        ["src/dexprior/ndp/_engine_cy.pyx"],
        include_dirs=[numpy.get_include()],
    )
]

setup(ext_modules=cythonize(extensions, language_level="3"))
