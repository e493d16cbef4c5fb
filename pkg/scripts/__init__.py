# scripts/__init__.py
"""
Модуль со вспомогательными скриптами: длительные приёмочные прогоны.
"""
