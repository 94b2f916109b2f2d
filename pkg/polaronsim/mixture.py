from __future__ import annotations

import logging
from dataclasses import dataclass, replace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixtureParams:
    """
    Physical constants of the bath-impurity mixture and the quench protocol,
    in trap units (hbar = m_B = 1, energies in hbar * omega_perp).
    """
    n_bath:    int   = 100
    n_imp:     int   = 1
    mass_bath: float = 1.0
    mass_imp:  float = 1.0
    omega:     float = 0.1
    g_bb:      float = 1.0
    g_bi_pre:  float = 0.0
    g_bi_post: float = 0.5
    x0:        float = 0.0
    u0:        float = -0.87

    def __post_init__(self) -> None:
        if self.n_bath < 1:
            raise ValueError(f"n_bath must be at least 1, got {self.n_bath}")
        if self.n_imp != 1:
            raise ValueError(f"n_imp is fixed to 1, got {self.n_imp}")
        if self.mass_bath <= 0 or self.mass_imp <= 0:
            raise ValueError(f"masses must be positive, got {self.mass_bath}, {self.mass_imp}")
        if self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.g_bi_pre != 0.0:
            logger.warning("g_bi_pre=%s: every reference protocol starts uncoupled", self.g_bi_pre)

    @property
    def k0(self) -> float:
        return self.mass_imp * self.u0

    @property
    def p0(self) -> float:
        return self.k0

    def coupling(self, stage: str) -> float:
        if stage == "pre":
            return self.g_bi_pre
        if stage == "post":
            return self.g_bi_post
        raise ValueError(f"stage must be 'pre' or 'post', got {stage!r}")

    def with_changes(self, **changes) -> "MixtureParams":
        return replace(self, **changes)
