"""Desk-scale analog in-memory-computing simulator for toy segmentation networks."""
