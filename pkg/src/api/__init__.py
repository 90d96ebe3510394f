"""FastAPI backend module."""
