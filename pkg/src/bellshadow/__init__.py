"""Bell violation shadows of LEO satellites."""
