from setuptools import Extension, setup

# The compiled interpreter kernel is optional: the package falls back to
# regforest._kernel_py at import time if the extension is absent.
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "regforest._kernel",
                ["src/regforest/_kernel.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
