"""Exception types shared across the package."""

from __future__ import annotations


class LevisimError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(LevisimError, ValueError):
    """Invalid configuration. Collects *every* violated invariant, not just the first."""

    def __init__(self, violations: list[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NearResonantDriveError(LevisimError, ValueError):
    """Drive frequency too close to resonance for the off-resonant response formula."""


class StageAbortError(LevisimError):
    """A simulation stage aborted with a diagnostic (wrong sign/gain, lost particle...)."""


class UnstableRunError(StageAbortError):
    """Position exceeded the configured instability bound."""


class ParticleLostError(StageAbortError):
    """Particle left the camera field of view."""


class AntiDampingError(StageAbortError):
    """Feedback is heating instead of cooling (monotone amplitude growth)."""


class LockLossError(StageAbortError):
    """Phase lock lost: residual phase persistently outside the linear regime."""


class LockUnstableError(LevisimError, ValueError):
    """Lock gain x update interval exceeds the discrete stability bound; refusing to run."""


class NumericError(LevisimError):
    """Non-finite state encountered during integration."""


class CalibrationError(LevisimError):
    """Calibration rejected (inconsistent frequencies) or fit failure."""


class NoiselessMeasurementError(LevisimError, ValueError):
    """Zero measurement noise makes the requested optimum unbounded."""
