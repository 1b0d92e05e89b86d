"""neurocascade package."""
