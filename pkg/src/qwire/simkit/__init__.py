"""Discrete-event simulation kit: engine, scenarios, network runner, reports and CLI."""
