"""Django management command package for barrierpo."""
