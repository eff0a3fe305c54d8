class DegenerateInputError(ValueError):
    """Input carries no usable evidence (constant map, too few samples, ...)."""
