"""Data models for cbsr."""
