"""Ensemble-averaged Ehrenfest dynamics of the spin-boson model.

The qubit of each trajectory is propagated either with a coupled RK4
integrator or with projected variational time stepping of a ZXZ circuit
(exact statevector or shot-sampled). Trajectories start from thermal
Wigner draws of a discretized Ohmic bath and are averaged into
reactant-population curves.
"""

__version__ = "0.1.0"
