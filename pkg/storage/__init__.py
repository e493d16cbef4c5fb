# storage/__init__.py
"""
Модуль для работы с файлами запуска: контейнер FRVS, маски PGM, набор данных, чекпоинты.
"""
