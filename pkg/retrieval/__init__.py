# Retrieval module initialization
