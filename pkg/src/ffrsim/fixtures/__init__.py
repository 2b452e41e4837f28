"""Bundled scenario fixtures (JSON package data)."""
