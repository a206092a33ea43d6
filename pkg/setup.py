import setuptools

setuptools.setup(
    name="dyadic_sim",
    version="0.1",
    description="Distributed simulation of continuous random variables via dyadic decomposition",
    url="#",
    author="dyadic_sim developers",
    packages=setuptools.find_packages(exclude=["tests"]),
    entry_points={"console_scripts": ["dyadic-sim=dyadic_sim.cli:main"]},
    zip_safe=False,
)
