"""Figure rendering for experiment trace CSVs and summary JSON files."""
