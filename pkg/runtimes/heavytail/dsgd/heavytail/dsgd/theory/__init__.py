"""heavytail.dsgd.theory."""
