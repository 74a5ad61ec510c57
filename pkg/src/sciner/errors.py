"""Shared exception types."""


class FormatError(ValueError):
    """A file or stream does not match its documented format."""


class AlignmentError(ValueError):
    """Two supposedly parallel inputs (gold/predicted, probs/tokens) disagree."""
