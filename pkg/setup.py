# SPDX-License-Identifier: GPL-3.0+
from setuptools import setup

requirements = []
with open('requirements.txt', 'r') as f:
    requirements = f.readlines()

setup(
    name='fracseir',
    version='0.1',
    description=('Calibrates a Caputo-Hadamard fractional SEIR model from daily case counts '
                 'with physics-informed neural networks and forecasts it'),
    license='GPLv3+',
    packages=[
        'fracseir',
        'fracseir.common',
        'fracseir.common.models',
        'fracseir.processor',
        'fracseir.client'
    ],
    include_package_data=True,
    install_requires=requirements,
    entry_points={
        'console_scripts': ['fracseir=fracseir.client.cli:main'],
    },
)
