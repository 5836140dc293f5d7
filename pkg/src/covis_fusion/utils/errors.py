class FusionError(Exception):
    """Base class for all covis_fusion exceptions"""
    def __init__(self, message: str = None, inner_error: Exception = None):
        super().__init__(message)
        self.message = message
        self.inner_error = inner_error
        if inner_error:
            self.__cause__ = inner_error

    def __str__(self):
        if self.inner_error:
            return f'{self.__class__.__name__}: {self.message}\nCaused by: {str(self.inner_error)}'
        return f'{self.__class__.__name__}: {self.message}'

class InvalidParamError(FusionError):
    """Raised when invalid parameters are provided"""
    pass

class ConfigError(FusionError):
    """Raised when a config file or override cannot be parsed or validated"""
    pass

class DegenerateInputError(FusionError):
    """Raised when a point set cannot determine a rigid transform"""
    pass

class PlacementFailureError(FusionError):
    """Raised when vehicles cannot be placed without overlap"""
    pass

class FitFailureError(FusionError):
    """Raised when the stationary velocity curve has too little support"""
    pass

class EmptyFrameError(FusionError):
    """Raised when a frame has no vehicle clusters to build a graph from"""
    pass

class DivergenceError(FusionError):
    """Raised when training produces a non-finite loss"""
    pass

class InsufficientPairsError(FusionError):
    """Raised when there are too few matched vehicle pairs to align"""
    pass

class NoCorrespondencesError(FusionError):
    """Raised when every candidate correspondence exceeds the reject radius"""
    pass

class MalformedFrameError(FusionError):
    """Raised when frame bytes are truncated, mislabeled or of another version"""
    pass

class CheckpointError(FusionError):
    """Raised when a parameter checkpoint is missing or does not fit the network"""
    pass

class DatasetError(FusionError):
    """Raised when a dataset directory is missing or inconsistent"""
    pass
