"""Exception hierarchy shared across the package."""


class SemanticPasteError(Exception):
    """Base class for all errors raised by this package."""


class EmbeddingLoadError(SemanticPasteError):
    """Malformed embedding file."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class UnresolvedLabelError(SemanticPasteError, KeyError):
    """A category label has no embedding and no substitution."""

    def __init__(self, label):
        super().__init__(label)
        self.label = label

    def __str__(self):
        return f"unresolved label {self.label!r}; add it to the substitution table"


class ObjectSkipped(SemanticPasteError):
    """An object cannot contribute a bank entry; ``reason`` is a short tag."""

    reason = "skipped"

    def __init__(self, message, reason=None):
        super().__init__(message)
        if reason is not None:
            self.reason = reason


class EmptyMaskError(ObjectSkipped):
    """No mask pixels fall inside the object's bounding box."""

    reason = "empty_mask"


class BankError(SemanticPasteError):
    """Object bank could not be built or loaded."""


class ConfigurationError(SemanticPasteError):
    """Invalid or incomplete configuration."""


class NoHostObjectsError(SemanticPasteError):
    """The host image has no annotated objects to anchor a paste."""


class UnplaceableError(SemanticPasteError):
    """A bank instance cannot be scaled or positioned within the constraints."""


class AnnotationError(SemanticPasteError):
    """A single annotation record is malformed."""

    def __init__(self, message, source=None, image_id=None):
        where = []
        if source is not None:
            where.append(str(source))
        if image_id is not None:
            where.append(f"image {image_id}")
        if where:
            message = f"{': '.join(where)}: {message}"
        super().__init__(message)
        self.source = source
        self.image_id = image_id
