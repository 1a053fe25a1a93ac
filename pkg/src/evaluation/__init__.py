"""
Episode runner, balancing metrics and comparison reports.
"""
