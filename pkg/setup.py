from setuptools import find_packages, setup

import densemap

with open('requirements.txt') as f:
  requirements = [line.strip() for line in f if line.strip() and line.strip() != 'pytest']

setup(
    name='densemap',
    version=densemap.__version__,
    description='Probabilistic volumetric mapping from sparse lidar and completed depth',
    packages=find_packages(),
    package_data={'densemap': ['config/*.yaml', 'scenes/*.txt']},
    install_requires=requirements,
    python_requires='>=3.8',
    entry_points={'console_scripts': ['densemap=densemap.main:main']},
)
