"""CMake-backed build for the staticquant python extension."""

import os
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name: str):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext: CMakeExtension) -> None:
        source_dir = Path(__file__).parent.resolve()
        out_dir = Path(self.get_ext_fullpath(ext.name)).parent.resolve()
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)

        import pybind11

        cmake_args = [
            f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={out_dir}",
            f"-DPYTHON_EXECUTABLE={sys.executable}",
            f"-Dpybind11_DIR={pybind11.get_cmake_dir()}",
            "-DCMAKE_BUILD_TYPE=Release",
            "-DSTATICQUANT_BUILD_TESTS=OFF",
            "-DSTATICQUANT_BUILD_PYTHON=ON",
        ]
        subprocess.run(["cmake", str(source_dir), *cmake_args], cwd=build_dir, check=True)
        subprocess.run(
            ["cmake", "--build", ".", "--target", "staticquant_python",
             f"-j{os.cpu_count() or 2}"],
            cwd=build_dir,
            check=True,
        )


setup(
    packages=["staticquant"],
    package_dir={"staticquant": "python/staticquant"},
    ext_modules=[CMakeExtension("staticquant._core")],
    cmdclass={"build_ext": CMakeBuild},
    zip_safe=False,
)
