"""Core utilities, configuration and errors for cbsr."""
