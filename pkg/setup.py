from setuptools import setup, find_packages

with open("README.md", "r") as fh:
    long_description = fh.read()

setup(
    name="hjidecomp",
    version="0.1.0",
    description="Target decomposition of multi-agent differential games: semi-Lagrangian HJI solvers, lower envelopes "
                "of reduced value functions and checks of when the envelope is the value",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=("tests",)),
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.8',
    install_requires=[
        "numpy>=1.20",
        "scipy>=1.6",
    ],
    extras_require={
        "test": ["pytest"],
    },
    entry_points={
        "console_scripts": ["hjidecomp=hjidecomp.cli:main"],
    },
)
