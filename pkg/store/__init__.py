# Store module initialization
