"""Content-aware warping for view synthesis."""
