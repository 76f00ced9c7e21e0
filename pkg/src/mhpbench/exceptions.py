class MHPError(ValueError):
    """Base class for domain errors raised by mhpbench."""


class ValidationError(MHPError):
    pass


class DatasetError(MHPError):
    """Inconsistent on-disk data (naming, sizes, misaligned id sets)."""


class PlacementError(MHPError):
    def __init__(self, image_index: int, message: str = "placement failure"):
        super().__init__(f"{message} (image index {image_index})")
        self.image_index = image_index
