# Patch operators
