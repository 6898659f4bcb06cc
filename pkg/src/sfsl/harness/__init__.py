"""Transport, dropout injection, metrics, cost model and experiment runner."""
