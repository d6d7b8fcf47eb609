"""Service modules for airbone-auth, one per pipeline stage."""
