"""Installation instructions for pim_simulation."""

from setuptools import setup

if __name__ == "__main__":
    setup(name="pim_simulation", setup_requires="setupmeta")
