from setuptools import setup, find_packages

setup(
    name="kawasaki_nucleation",
    version="0.1.0",
    packages=find_packages(),
)
