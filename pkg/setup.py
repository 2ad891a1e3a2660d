"""Build script.

The compiled kernels are optional: if Cython or a C compiler is missing the
build falls back to a pure-Python wheel and the package selects the numpy
kernel implementations at import time.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, otherwise warn and continue."""

    def run(self):
        try:
            build_ext.run(self)
        except Exception as exc:  # compiler missing entirely
            self._warn(exc)

    def build_extension(self, ext):
        try:
            build_ext.build_extension(self, ext)
        except Exception as exc:  # compile/link failure
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        sys.stderr.write(
            "\nWARNING: building the compiled kernels failed (%s);\n"
            "         falling back to the pure-Python implementations.\n\n" % exc
        )


extensions = []
try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "nonconv._kernels",
                ["src/nonconv/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError as exc:
    sys.stderr.write("Cython/numpy unavailable (%s); pure-Python build.\n" % exc)

setup(ext_modules=extensions, cmdclass={"build_ext": optional_build_ext})
