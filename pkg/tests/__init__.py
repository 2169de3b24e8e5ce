"""
Test package for ORM Capital Calculator Engine
"""