"""Exception type shared by every module.

Every failure carries a short machine-readable ``code`` so callers (and the
CLI exit-code mapping) can branch on it without parsing messages.
"""


class TTSHSError(Exception):
    """Raised for contract violations; ``code`` is a stable identifier."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


# Codes that signal a numerical failure rather than bad input (CLI exit 4).
NUMERICAL_CODES = frozenset({"SINGULAR_SYSTEM", "SINGULAR_LYAPUNOV", "RESIDUAL_TOO_LARGE"})
