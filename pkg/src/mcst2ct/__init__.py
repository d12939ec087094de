"""Two-layer clustering-based sparsifying transforms for low-dose CT."""
