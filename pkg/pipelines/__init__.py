# Pipelines module initialization
