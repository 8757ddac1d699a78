"""
Simulation and verification toolkit for approximate reflection couplings
of Langevin dynamics and the generalization bounds they certify.
"""

__all__ = ['model', 'potentials', 'eberle', 'quadrature', 'sde', 'streams', 'ensemble',
           'estimators', 'report', 'records', 'experiments', 'config', 'schema', 'cli']
