"""Front propagation for F-KPP and PAM equations in random media.

Submodules: ``environment`` (potentials), ``branching_law`` (offspring laws
and the F-KPP nonlinearity), ``pde_solver`` (finite differences and front
positions), ``feynman_kac`` (path estimators and Lyapunov exponents),
``mgf`` (hitting-time moment generating functions and velocity checks),
``bbmre`` (branching Brownian motion), ``coupling`` (two coupled particle
systems), ``experiments`` and ``cli``.
"""
__version__ = "0.1.0"
