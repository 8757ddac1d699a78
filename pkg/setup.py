from setuptools import setup

setup(name='arcsim', version='1.0.0',
      packages=['arcsim'],
      license='MIT',
      description='Approximate reflection coupling simulation and verification toolkit',
      entry_points = {
          'console_scripts': ['arcsim=arcsim.cli:main'],
      },
      install_requires=[
          'numpy',
          'scipy'
      ]
)
