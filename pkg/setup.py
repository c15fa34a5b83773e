"""Build hook for the optional compiled event core.

The package is fully functional without the extension (``pcsq._corepy`` is a
line-for-line twin); if Cython or a C compiler is missing we install pure.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/pcsq/_corecy.pyx",
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"pcsq: building without compiled core ({exc!r})")

setup(ext_modules=ext_modules)
