"""Package initialization file."""
