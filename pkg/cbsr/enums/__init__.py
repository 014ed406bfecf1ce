"""Enumerations for cbsr."""
