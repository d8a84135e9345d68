class ExtractorError(Exception):
    pass


class ModelLoadFailure(ExtractorError):
    pass


class ImageDecodeFailure(ExtractorError):
    pass


class GridMismatch(ExtractorError):
    pass
