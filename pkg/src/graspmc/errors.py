class GraspMCError(ValueError):
    """Error carrying a short machine-readable ``code`` (e.g. ``"no-rims"``)."""

    def __init__(self, code, message=None):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)
