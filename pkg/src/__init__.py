"""
Toolkit de representaciones en árbol de conectomas estructurales (ctree) v1.0
"""
__version__ = "1.0.0"
