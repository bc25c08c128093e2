"""Detect compromised devices from routine DNS traffic to disreputable hosts."""
