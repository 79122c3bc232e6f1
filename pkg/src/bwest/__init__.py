"""Min-plus network calculus toolkit for available-bandwidth estimation."""
