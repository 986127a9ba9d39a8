# Shared module initialization
