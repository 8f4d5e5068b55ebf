#!/usr/bin/env python
from setuptools import setup, find_packages

version = '0.1'

setup(
    name='ehrcontrast',
    version=version,
    description="Contrastive training and evaluation of RETAIN and RNN "
                "encoders on patient event sequences",
    long_description=open('README.rst').read(),
    packages=find_packages(),
    license='MIT',
    python_requires='>=3.8',
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",
        "Topic :: Software Development :: Libraries :: Python Modules",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Medical Science Apps.",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    install_requires=['numpy', 'scipy >= 1.8', 'scikit-learn', 'joblib',
                      'tqdm', 'pandas'],
    entry_points={
        'console_scripts': ['ehrcontrast = ehrcontrast.cli:main'],
    },
)
