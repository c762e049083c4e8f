"""barrierpo management commands."""
