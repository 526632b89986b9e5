"""Desk-scale crawl-vs-harvest benchmark: corpus generation, crawler, runs and reports."""
