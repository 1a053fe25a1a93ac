"""
High-level (60 Hz) supervisory controllers and their observation contract.
"""
