"""Build script: compiles the recurrence-scan kernel when Cython and a C
compiler are available, otherwise installs with the pure-numpy fallback.
"""

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Degrade to the pure-python scan when compilation is impossible."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"ssmguard: compiled scan kernel skipped ({exc}); "
                  f"using pure-python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"ssmguard: building {ext.name} failed ({exc}); "
                  f"using pure-python fallback")


ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "ssmguard._scan_cy",
                ["src/ssmguard/_scan_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - builder environment dependent
    print(f"ssmguard: cython unavailable ({exc}); using pure-python fallback")

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
