# Metrics
