"""Concrete feedback protocols for the thermally damped qubit.

Two families are provided.  The jump-triggered inversion protocol drives
the qubit for a fixed window after each emission and is solved through
the renewal machinery in engine.  The stroboscopic protocols (projective
readout plus conditional rotation, weak Gaussian monitoring plus
Hamiltonian kick) run through composed instruments.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import engine, memory, models, superop


def optimal_drive_time(p, lam=1.0):
    """Drive-window length maximizing the post-emission ground return.

    p is the damping-to-drive ratio gamma/lam and must lie in [0, 4),
    where the driven no-jump decay is underdamped.  atan2 keeps the
    result continuous across the sign change of 8 - p**2.
    """
    if p < 0.0 or p >= 4.0:
        raise ValueError("requires 0 <= gamma/drive < 4")
    if lam <= 0.0:
        raise ValueError("drive amplitude must be positive")
    root = math.sqrt(16.0 - p * p)
    return 2.0 * (math.pi + math.atan2(p * root, 8.0 - p * p)) / (lam * root)


@dataclass(frozen=True)
class InversionScenario:
    """Emission-triggered drive window: wait tau0, drive tau1, then idle."""

    gamma: float
    nbar: float
    lam: float
    tau0: float
    tau1: float
    detuning: float = 0.0

    def __post_init__(self):
        if self.nbar <= 0.0:
            raise ValueError("thermal occupation must be positive so that "
                             "both jump channels fire")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.lam <= 0.0:
            raise ValueError("drive amplitude must be positive")
        if self.tau0 < 0.0 or self.tau1 < 0.0:
            raise ValueError("window times must be non-negative")

    @property
    def qubit(self):
        return models.ThermalQubit(gamma=self.gamma, nbar=self.nbar,
                                   drive=self.lam, detuning=self.detuning)

    def process(self):
        qb = self.qubit
        l_off = qb.liouvillian(drive_on=False)
        l_on = qb.liouvillian(drive_on=True)
        jumps = qb.jump_superops()
        total_jump = sum(jumps.values())
        n_off = l_off - total_jump
        n_on = l_on - total_jump
        after_emission = []
        if self.tau0 > 0.0:
            after_emission.append(engine.Segment(self.tau0, n_off, l_off))
        if self.tau1 > 0.0:
            after_emission.append(engine.Segment(self.tau1, n_on, l_on))
        after_emission.append(engine.Segment(math.inf, n_off, l_off))
        after_absorption = [engine.Segment(math.inf, n_off, l_off)]
        return engine.JumpProcess(
            channels=(-1.0, 1.0),
            jump_maps={-1.0: jumps[-1], 1.0: jumps[+1]},
            segments={-1.0: tuple(after_emission),
                      1.0: tuple(after_absorption)})

    def time_scales(self):
        relax = 1.0 / (self.gamma * (2.0 * self.nbar + 1.0))
        scales = [self.tau0, self.tau1, relax, 1.0 / self.lam]
        if self.detuning != 0.0:
            scales.append(1.0 / abs(self.detuning))
        return tuple(scales)

    def drive_is_on(self, k, tau):
        """Instantaneous window indicator; both endpoints count as on."""
        return k == -1.0 and self.tau0 <= tau <= self.tau0 + self.tau1

    def hamiltonian(self, k, tau):
        return self.qubit.hamiltonian(self.drive_is_on(k, tau))

    def steady_state(self, method="closed", extra_scales=(), **kwargs):
        scales = self.time_scales() + tuple(extra_scales)
        return engine.jump_steady_state(self.process(), scales=scales,
                                        method=method, **kwargs)

    def discrete_run(self, dt, steps, rho0=None, k0=-1.0, tau_cap=None):
        """Windowed-instrument chain sharing the oracle's discretization."""
        proc = self.process()
        if tau_cap is None:
            tau_cap = self.tau0 + self.tau1 + 8.0 / (
                self.gamma * (2.0 * self.nbar + 1.0))
        tau_cap = round(tau_cap / dt) * dt
        inst = engine.discrete_jump_instrument(proc, dt)
        rho = models.GROUND if rho0 is None else rho0
        chain = engine.jump_chain_init(proc, dt, tau_cap, rho, k0)
        plan = engine.jump_chain_plan(chain, proc, inst)
        for _ in range(steps):
            chain = engine.jump_chain_step(chain, proc, inst, plan)
        return chain


@dataclass(frozen=True)
class StroboscopicScenario:
    """Projective readout every dt with an optional conditional rotation.

    Free evolution between readouts is thermal damping plus a transverse
    drive of amplitude lam.  With feedback_angle = pi on the excited
    outcome the post-readout marginal is reset to the ground state
    exactly, making consecutive outcomes independent.
    """

    gamma: float
    nbar: float
    lam: float
    dt: float = None
    feedback_angle: float = math.pi
    feedback_axis: str = "x"
    feedback_outcome: float = 1.0
    detuning: float = 0.0

    def __post_init__(self):
        if self.dt is None:
            object.__setattr__(self, "dt", 0.5 * math.pi / self.lam)
        if self.dt <= 0.0:
            raise ValueError("readout period must be positive")

    @property
    def qubit(self):
        return models.ThermalQubit(gamma=self.gamma, nbar=self.nbar,
                                   drive=self.lam, detuning=self.detuning)

    def instrument(self, feedback=True):
        fb = None
        if feedback and self.feedback_angle != 0.0:
            fb = models.rotation_feedback(self.feedback_angle,
                                          self.feedback_axis,
                                          on_outcome=self.feedback_outcome)
        label = "strobe+feedback" if fb is not None else "strobe"
        return models.composed_instrument(
            models.projective_instrument(),
            self.qubit.liouvillian(drive_on=True), self.dt,
            feedback=fb, label=label)

    def memory(self):
        return memory.last_outcome()

    def initial_state(self, rho0=None):
        rho = models.GROUND if rho0 is None else rho0
        return memory.delta_state(rho, self.memory())

    def outcome_series_ground(self):
        """Short-period expansion coefficients of P(x = -1): (a0, a1, a2).

        Probability of reading the ground outcome one period after a
        ground-state reset, as a polynomial in the period dt.
        """
        p = self.gamma / self.lam
        a2 = 0.5 * (-2.0 + self.nbar * (1.0 + 2.0 * self.nbar) * p * p)
        return (1.0, -self.nbar * self.gamma, a2 * self.lam ** 2)

    def outcome_series_mean(self):
        """Short-period expansion of the mean outcome: (a0, a1, a2)."""
        p = self.gamma / self.lam
        a2 = 2.0 - self.nbar * (1.0 + 2.0 * self.nbar) * p * p
        return (-1.0, 2.0 * self.nbar * self.gamma, a2 * self.lam ** 2)

    def outcome_series_variance(self):
        """Short-period expansion of the outcome variance: (a0, a1, a2)."""
        p = self.gamma / self.lam
        a2 = 2.0 * (2.0 - self.nbar * (1.0 + 4.0 * self.nbar) * p * p)
        return (0.0, 4.0 * self.nbar * self.gamma, a2 * self.lam ** 2)


def weak_monitoring_instrument(a_op, f_op, lam, dt, hamiltonian=None,
                               collapse_ops=(), grid=None):
    """Gaussian readout of a_op with a conditional kick along f_op.

    The dt -> 0 limit of iterating this instrument is the continuous
    generator from engine.wgm_generator with the same operators.
    """
    h = np.zeros_like(np.asarray(a_op)) if hamiltonian is None else hamiltonian
    lv = superop.liouvillian(h, collapse_ops)
    meas = models.gaussian_kraus(a_op, lam, dt, grid=grid)
    fb = models.kick_feedback(f_op, lam, dt)
    return models.composed_instrument(meas, lv, dt, feedback=fb,
                                      label="weak-monitoring")


def weak_monitoring_generator(a_op, f_op, lam, hamiltonian=None,
                              collapse_ops=()):
    h = np.zeros_like(np.asarray(a_op)) if hamiltonian is None else hamiltonian
    lv = superop.liouvillian(h, collapse_ops)
    return engine.wgm_generator(a_op, lam, f_op, lv)


def equal_superposition():
    """(|g> + |e>)/sqrt(2) as a density matrix."""
    v = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
    return np.outer(v, v.conj())
