# Shared module imports