"""Seeded data generators and the replication runner."""
