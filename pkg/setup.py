"""
DLRM training kit

Hybrid-parallel DLRM training on CPU: blocked MLP kernels, EmbeddingBag
updates, Split-SGD-BF16, a rank-based collective layer and a benchmark
harness with a communication cost model.
"""

from setuptools import setup, find_packages
from pathlib import Path

# Read README file
readme_file = Path(__file__).parent / "README.md"
long_description = readme_file.read_text(encoding="utf-8") if readme_file.exists() else ""

# Read requirements
requirements_file = Path(__file__).parent / "requirements.txt"
requirements = []
if requirements_file.exists():
    requirements = requirements_file.read_text().strip().split("\n")
    requirements = [
        req.strip() for req in requirements
        if req.strip() and not req.startswith("#") and not req.startswith("pytest")
    ]

setup(
    name="dlrm-kit",
    version="0.1.0",
    description="Hybrid-parallel DLRM training benchmark with blocked kernels and collectives",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["src", "src.*"]),
    py_modules=["main"],
    include_package_data=True,
    install_requires=requirements,
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
            "pytest-mock>=3.11.0",
        ],
    },
    python_requires=">=3.9",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: System :: Distributed Computing",
    ],
    keywords="dlrm recommendation embedding allreduce alltoall bf16 benchmark",
    entry_points={
        "console_scripts": [
            "dlrm-kit=main:main",
        ],
    },
)
