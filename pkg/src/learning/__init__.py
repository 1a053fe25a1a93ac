"""
Actor-critic networks, optimizer, checkpoints and the on-policy trainer.
"""
