"""Dataset building, configuration, stage orchestration, metrics and plots."""
