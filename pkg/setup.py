import os

from setuptools import setup

ext_modules = []
if os.environ.get("CORRJOIN_PURE_PYTHON") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        extensions = [Extension("corrjoin._dp_kernel", ["src/corrjoin/_dp_kernel.pyx"],
                                include_dirs=[np.get_include()], extra_compile_args=["-O3"],
                                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])]
        ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
