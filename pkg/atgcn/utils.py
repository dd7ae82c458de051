import hashlib
import os

from atgcn.errors import InputFileError

NEGATIVE_VALUES = {'0', 'false'}

_HASH_BLOCK_SIZE = 1 << 16


def convert_to_int(possible_number, use_if_not_int):
    """
    Save conversion of string to int with ability to specify default if string is not a number
    """
    try:
        result = int(possible_number)
    except (TypeError, ValueError):
        result = use_if_not_int
    return result


def env_var_active(env_var):
    """
    Calculates if an environment variable is set.
    """
    env_var_value = os.environ.get(env_var)
    return bool(env_var_value) and env_var_value.lower() not in NEGATIVE_VALUES


def ensure_dir(dir_name):
    try:
        os.makedirs(dir_name)
    except OSError:
        if not os.path.isdir(dir_name):
            raise
    return dir_name


def file_sha256(file_name):
    digest = hashlib.sha256()
    with open(file_name, 'rb') as f:
        for block in iter(lambda: f.read(_HASH_BLOCK_SIZE), b''):
            digest.update(block)
    return digest.hexdigest()


def relative_to(base_file, path):
    """
    Resolves path against the directory holding base_file, unless already absolute.
    """
    if os.path.isabs(path):
        return path
    return os.path.join(os.path.dirname(os.path.abspath(base_file)), path)


def open_input(file_name, mode='r'):
    """
    open() for files the user pointed us at; a missing or unreadable file is
    a data error, not a crash.
    """
    try:
        return open(file_name, mode)
    except (IOError, OSError) as e:
        raise InputFileError("cannot read '%s' - %s" % (file_name, e.strerror or e))
