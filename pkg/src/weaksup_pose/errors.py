"""Exception types shared across modules."""


class PoseError(Exception):
    pass


class NonPositiveDepth(PoseError, ValueError):
    def __init__(self, index=None, depth=None):
        self.index = index
        self.depth = depth
        where = "" if index is None else f" at index {index}"
        super().__init__(f"point{where} has non-positive depth {depth!r}")


class DegenerateScene(PoseError):
    pass


class EmptyCloud(PoseError, ValueError):
    pass


class AllInvisible(PoseError, ValueError):
    pass


class MissingGroundTruth(PoseError, ValueError):
    pass


class ShapeMismatch(PoseError, ValueError):
    pass


class CacheMismatch(PoseError, ValueError):
    pass


class DivergenceDetected(PoseError, FloatingPointError):
    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")


class NoVisibleKeypoints(PoseError, ValueError):
    pass


class EmptyEvalSet(PoseError, ValueError):
    pass


class InvalidConfig(PoseError, ValueError):
    pass
