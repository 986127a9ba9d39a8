# Llm module initialization
