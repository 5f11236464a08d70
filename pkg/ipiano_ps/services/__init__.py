"""Domain services: geometry, energy, solvers and Lipschitz bounds."""
