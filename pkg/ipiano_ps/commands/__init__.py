"""Command modules registered on the root command group."""
