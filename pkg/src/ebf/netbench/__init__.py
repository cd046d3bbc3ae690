"""Run a topology as real processes talking a small framed protocol over TCP."""
