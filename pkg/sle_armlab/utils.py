import math
import os

import numpy as np
import objsize

from .constants import BYTE_SIZE_CONVERSIONS, THREADS_ENV_VAR
from .exceptions import DomainError


def _assert(bool_, err_string="", exc=ValueError):
    """
    Avoid using asserts in production code, they vanish under `python -O`

    :param bool_: (bool) condition that must hold
    :param err_string: (str) message of the raised exception
    :param exc: (type) exception class to raise, ValueError by default
    """
    if not bool_:
        raise exc(err_string)


def get_deep_byte_size(obj):
    return objsize.get_deep_size(obj)


def user_input_byte_size_to_bytes(user_bytes):
    """
    Convert the user input to integer bytes

    User input may be bytes directly or a suffixed string amount such as '16M'
    """
    _assert(isinstance(user_bytes, (int, str)), "Invalid byte size input")

    if isinstance(user_bytes, int):
        _assert(user_bytes > 0, "Byte size must be >0")
        return user_bytes

    if user_bytes.isdigit():
        return user_input_byte_size_to_bytes(int(user_bytes))

    suffix = user_bytes[-1:].upper()
    _assert(suffix in BYTE_SIZE_CONVERSIONS, "Unknown byte size suffix")

    quantity = float(user_bytes[:-1])
    _assert(quantity > 0, "Memory size must be >0")

    return int(BYTE_SIZE_CONVERSIONS[suffix] * quantity)


def parse_grid(text):
    """
    Parse a grid expression into a list of floats

    Accepted forms:
        'a:k'     k values a, a/2, a/4, ...
        'a:b:k'   k log-spaced values from a to b inclusive
        'a,b,c'   explicit values
    """
    _assert(isinstance(text, str) and text.strip(), "Empty grid", DomainError)
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) == 2:
                start, count = float(parts[0]), int(parts[1])
                _assert(start > 0 and count >= 1, "Bad halving grid", DomainError)
                return [start * 2.0 ** (-i) for i in range(count)]
            _assert(len(parts) == 3, "Bad grid expression", DomainError)
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
            _assert(start > 0 and stop > 0 and count >= 2, "Bad log grid", DomainError)
            return list(np.geomspace(start, stop, count))
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as err:
        if isinstance(err, DomainError):
            raise
        raise DomainError(f"Malformed grid {text!r}") from err


def parse_complex(text):
    """Parse '1', '0+2i', '-1.5-0.25j' or '2i' into a complex number"""
    _assert(isinstance(text, str) and text.strip(), "Empty complex", DomainError)
    cleaned = text.strip().replace(" ", "").replace("i", "j")
    if cleaned in ("j", "+j", "-j"):
        cleaned = cleaned.replace("j", "1j")
    try:
        value = complex(cleaned)
    except ValueError as err:
        raise DomainError(f"Malformed complex number {text!r}") from err
    _assert(
        math.isfinite(value.real) and math.isfinite(value.imag),
        "Complex number must be finite",
        DomainError,
    )
    return value


def format_complex(value, digits=12):
    value = complex(value)
    sign = "-" if round(value.imag, digits) < 0 else "+"
    real = round(value.real, digits) + 0.0
    imag = abs(round(value.imag, digits)) + 0.0
    return f"{real:.{digits}g}{sign}{imag:.{digits}g}i"


def resolve_threads(requested=None):
    """
    Decide the worker pool size

    The environment variable wins over the flag, the flag over the CPU count
    """
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        try:
            threads = int(env)
        except ValueError as err:
            raise DomainError(f"{THREADS_ENV_VAR} must be an integer") from err
    elif requested is not None:
        threads = int(requested)
    else:
        threads = os.cpu_count() or 1
    _assert(threads >= 1, "Thread count must be >=1", DomainError)
    return threads
