"""Particles that jump forward at a rate set by their distance to the center of mass.

Submodules:

``model``        rate functions, jump laws, initial conditions
``simulator``    exact event-driven simulation of the n-particle system
``exact_small``  n = 2 gap chain and density, n = 3 lattice
``meanfield``    finite-volume solver for the mean-field equation
``waves``        traveling-wave speed and profiles
``metrics``      Wasserstein, Kolmogorov and test-function distances
``evt``          record processes and the single mean-field particle
``specfun``      log-gamma, digamma, adaptive quadrature, root finding
``cli``          the ``flockjump`` command
"""
__version__ = "0.1.0"
