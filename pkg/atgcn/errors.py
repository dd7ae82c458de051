
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class AtgcnError(Exception):
    """
    Base of every error raised by the atgcn package. Each kind carries the
    process exit status the command line uses when it escapes a subcommand.
    """
    exit_code = EXIT_NUMERIC


class UsageError(AtgcnError):
    exit_code = EXIT_USAGE


class DataError(AtgcnError, ValueError):
    exit_code = EXIT_DATA


class ParseError(DataError):

    def __init__(self, path, line_number, msg, frame_index=None):
        self.path = path
        self.line_number = line_number
        self.frame_index = frame_index
        where = '%s line %d' % (path, line_number)
        if frame_index is not None:
            where += ' (frame %s)' % frame_index
        super(ParseError, self).__init__('%s: %s' % (where, msg))


class SchemaError(DataError):
    pass


class OrderingError(DataError):
    pass


class ValidationError(DataError):
    pass


class UnusableJointError(DataError):

    def __init__(self, joint_index, joint_name=None):
        self.joint_index = joint_index
        name = ' (%s)' % joint_name if joint_name else ''
        super(UnusableJointError, self).__init__(
            'joint %d%s has no observation above the confidence threshold' % (joint_index, name))


class ParameterError(DataError):
    pass


class InputFileError(DataError):
    pass


class CheckpointError(DataError):
    pass


class ManifestError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class NumericError(AtgcnError):
    exit_code = EXIT_NUMERIC


class ShapeError(NumericError, ValueError):
    pass


class NonFiniteError(NumericError):
    pass


class BackwardError(NumericError):
    pass


class TrainingError(NumericError):

    def __init__(self, msg, context=None):
        self.context = context
        if context is not None:
            msg = '%s: %s' % (context, msg)
        super(TrainingError, self).__init__(msg)


class UndefinedMetricError(NumericError):
    pass
