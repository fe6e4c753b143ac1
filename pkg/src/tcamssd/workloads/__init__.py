"""Evaluation drivers: point queries, analytic scans, graph traversal."""
