# Outer solvers
