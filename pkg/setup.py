#!/usr/bin/env python3
from setuptools import setup, find_packages
from graphbridge.version import __version__

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip().split("#")[0].strip() for line in fh
                    if line.strip() and not line.startswith("#")]

setup(
    name="graphbridge",
    version=__version__,
    description="Pre-train and side-tune graph neural networks across node, graph and point-cloud tasks",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={
        "test": ["pytest>=7.0", "scikit-learn>=1.2"],
    },
    entry_points={
        "console_scripts": [
            "graphbridge=graphbridge.__main__:main",
        ],
    },
    include_package_data=True,
)
