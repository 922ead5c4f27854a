class MetaXAIError(ValueError):
    """Base class for input problems detected by this package."""


class SchemaError(MetaXAIError):
    pass


class ParseError(MetaXAIError):
    def __init__(self, path, row, column, value):
        self.path, self.row, self.column, self.value = path, row, column, value
        super().__init__(f"{path}: row {row}, column {column!r}: cannot parse {value!r} as a number")


class JoinError(MetaXAIError):
    def __init__(self, message, ids):
        self.ids = sorted(ids)
        super().__init__(f"{message}: {', '.join(self.ids)}")


class DegenerateBlockError(MetaXAIError):
    pass


class DegenerateRatioError(MetaXAIError):
    def __init__(self, dataset_id):
        self.dataset_id = dataset_id
        super().__init__(f"dataset {dataset_id}: gbm_default rating is 0, landmarker ratios undefined")


class DimensionError(MetaXAIError):
    pass


class FoldError(MetaXAIError):
    pass
