"""
Utility modules: binary containers, image I/O, phantoms and sweep state.
"""
