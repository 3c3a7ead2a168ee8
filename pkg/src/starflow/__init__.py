"""Linear Poincare flows, Lyapunov exponents and periodic approximation of hyperbolic measures for 3-dimensional flows."""
