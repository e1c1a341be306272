# Inner ADMM solver
