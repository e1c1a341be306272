# Experiment configuration and sweep harness
