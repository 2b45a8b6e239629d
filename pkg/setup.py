import setuptools

with open("README.md", "r") as fin:
    long_description = fin.read()

setuptools.setup(
    name="bifactorid",
    version="0.1",
    description="Identifiability checks, equivalence certificates and \
simulation benchmarks for bifactor, extended bifactor and two-tier models.",
    entry_points={"console_scripts": ["bifid=bifactorid.bifactorid:bifid"]},
    install_requires=["numpy>=1.21", "scipy>=1.7", "pandas>=1.3"],
    python_requires=">=3.8",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
