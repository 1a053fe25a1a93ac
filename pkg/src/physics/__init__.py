"""
Plant model and low-level flight control for the tethered ball-and-beam task.
"""
