"""Build script; compiles the optional kernel extension.

The package works without the extension (numpy fallback is selected at
import), so a missing compiler or Cython only costs speed, not functionality.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext = Extension(
        "modt._kernels.core",
        sources=["src/modt/_kernels/core.pyx"],
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})
except Exception as exc:  # pragma: no cover - depends on toolchain
    print(f"skipping compiled kernels ({exc}); numpy fallback will be used")

setup(ext_modules=ext_modules)
