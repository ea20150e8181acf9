"""
Suite de pruebas del toolkit de árboles de conectoma.
"""
