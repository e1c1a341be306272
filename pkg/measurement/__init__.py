# Measurement operators
