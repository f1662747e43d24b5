"""Shipped example problems (JSON); load with model.load_builtin_problem."""
