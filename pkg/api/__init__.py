"""Local HTTP API for the Deep Arguing classifier."""
