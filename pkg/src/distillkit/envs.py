"""Deterministic desk-scale gait environments and analytic experts.

Four independent 1-DoF "legs" driven by a PD force law toward the commanded
setpoint, plus a global phase oscillator.  The observation exposes the same
structure a legged-robot policy would see: joint positions and velocities,
the previous action, a discrete phase state with an in-phase step counter,
and the velocity command.  Gaits are encoded purely as per-leg phase offsets
of a sinusoidal reference; the expert is a pure function of the observation,
so relabeling visited states with expert actions is exact.
"""

from __future__ import annotations

import math

import numpy as np

from distillkit.core import DistillkitError, Environment, FeatureSchema, Policy

GAITS = ("walk", "trot", "pace", "bound")
LEGS = ("fl", "fr", "hl", "hr")

# quarter-phase ladder for walk; diagonal, lateral and front/rear pairs
PHASE_OFFSETS = {
    "walk": (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi),
    "trot": (0.0, math.pi, math.pi, 0.0),
    "pace": (0.0, math.pi, 0.0, math.pi),
    "bound": (0.0, 0.0, math.pi, math.pi),
}

DT = 0.02                      # 50 Hz control
CYCLE_STEPS = 160              # one full gait cycle (3.2 s)
QUARTER_STEPS = CYCLE_STEPS // 4
OMEGA = 2.0 * math.pi / (CYCLE_STEPS * DT)
AMPLITUDE = 0.6                # reference amplitude at command 1.0
# stride shaping: a quarter-cycle harmonic on top of the base sinusoid
# (lift pulse), shared by all legs
SHAPE_BETA = 0.3
SHAPE_HARMONIC = 4
SHAPE_PHASE = 1.0
STIFFNESS = 100.0              # leg PD force law toward the setpoint
DAMPING = 14.0
ACTION_LIMIT = 1.0
INIT_NOISE = 0.05

EXPERT_KP = 1.0
EXPERT_KD = 0.3


def gait_phase_offsets(gait: str) -> np.ndarray:
    if gait not in PHASE_OFFSETS:
        raise DistillkitError(f"unknown gait {gait!r}; expected one of {GAITS}")
    return np.asarray(PHASE_OFFSETS[gait])


def leg_references(theta: float, command: float, offsets: np.ndarray):
    """Reference position/velocity/acceleration per leg at phase theta."""
    ph = theta + offsets
    m = SHAPE_HARMONIC
    wph = m * theta + SHAPE_PHASE
    scale = AMPLITUDE * command
    pos = scale * (np.sin(ph) + SHAPE_BETA * math.sin(wph))
    vel = scale * OMEGA * (np.cos(ph) + SHAPE_BETA * m * math.cos(wph))
    acc = -scale * OMEGA ** 2 * (np.sin(ph)
                                 + SHAPE_BETA * m * m * math.sin(wph))
    return pos, vel, acc


def leg_base_velocity(theta: float, command: float, offsets: np.ndarray):
    """Velocity of the base sinusoid alone (no stride-shape harmonic)."""
    return AMPLITUDE * command * OMEGA * np.cos(theta + offsets)


def observation_schema() -> FeatureSchema:
    names, units, groups = [], [], []
    for leg in LEGS:
        names.append(f"dof_pos_{leg}")
        units.append("rad")
        groups.append("joint_pos")
    for leg in LEGS:
        names.append(f"dof_vel_{leg}")
        units.append("rad/s")
        groups.append("joint_vel")
    for leg in LEGS:
        names.append(f"prev_action_{leg}")
        units.append("rad")
        groups.append("prev_action")
    for k in range(4):
        names.append(f"phase_state_{k}")
        units.append("1")
        groups.append("phase_state")
    names.append("phase_iters")
    units.append("steps")
    groups.append("phase_iters")
    names.append("command_x")
    units.append("m/s")
    groups.append("command")
    return FeatureSchema(tuple(names), tuple(units), tuple(groups))


ACTION_NAMES = tuple(f"target_{leg}" for leg in LEGS)

# observation slices, fixed layout
_POS = slice(0, 4)
_VEL = slice(4, 8)
_PREV = slice(8, 12)
_PHASE = slice(12, 16)
_ITERS = 16
_COMMAND = 17


class PhaseGaitEnv(Environment):
    """Four second-order integrator legs plus a phase oscillator."""

    obs_dim = 18
    action_dim = 4

    def __init__(self, gait: str, command: float = 0.5,
                 episode_length: int = 1000, init_noise: float = INIT_NOISE):
        self.gait = gait
        self.offsets = gait_phase_offsets(gait)
        self.command = float(command)
        self.episode_length = int(episode_length)
        self.init_noise = float(init_noise)
        self._q = np.zeros(4)
        self._qd = np.zeros(4)
        self._prev_action = np.zeros(4)
        self._theta = 0.0
        self._step_count = 0
        self._done = True

    def set_command(self, command: float) -> None:
        if not -1.0 <= command <= 1.0:
            raise DistillkitError("command must lie in [-1, 1]")
        self.command = float(command)

    def reset(self, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._q = rng.uniform(-self.init_noise, self.init_noise, size=4) \
            if self.init_noise > 0 else np.zeros(4)
        self._qd = np.zeros(4)
        self._prev_action = np.zeros(4)
        self._theta = 0.0
        self._step_count = 0
        self._done = False
        return self._observe()

    @property
    def phase_state(self) -> int:
        return int(self._theta // (0.5 * math.pi)) % 4

    @property
    def phase_iters(self) -> int:
        return self._step_count % QUARTER_STEPS

    def _observe(self) -> np.ndarray:
        obs = np.empty(self.obs_dim)
        obs[_POS] = self._q
        obs[_VEL] = self._qd
        obs[_PREV] = self._prev_action
        obs[_PHASE] = 0.0
        obs[12 + self.phase_state] = 1.0
        obs[_ITERS] = float(self.phase_iters)
        obs[_COMMAND] = self.command
        return obs

    def step(self, action):
        if self._done:
            raise DistillkitError("step() called on a finished episode")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (4,) or not np.isfinite(a).all():
            raise DistillkitError("action must be 4 finite values")

        # semi-implicit Euler under the PD force law toward the setpoint
        force = STIFFNESS * (a - self._q) - DAMPING * self._qd
        self._qd = self._qd + DT * force
        self._q = self._q + DT * self._qd
        self._theta = (self._theta + OMEGA * DT) % (2.0 * math.pi)
        self._step_count += 1

        ref_pos, _, _ = leg_references(self._theta, self.command, self.offsets)
        err = self._q - ref_pos
        smooth = a - self._prev_action
        reward = math.exp(-float(err @ err)) - 0.01 * float(smooth @ smooth)

        self._prev_action = a.copy()
        if self._step_count >= self.episode_length:
            self._done = True
        return self._observe(), reward, self._done


class GaitExpert(Policy):
    """Analytic tracking controller, a pure function of the observation.

    Reconstructs the oscillator phase from the discrete phase state and the
    in-phase counter, anticipates the next-step reference, and combines an
    inverse-dynamics feedforward with PD feedback.  Output clamps to the
    actuator range.
    """

    family = "expert"
    action_dim = 4

    def __init__(self, gait: str, kp: float = EXPERT_KP, kd: float = EXPERT_KD):
        self.gait = gait
        self.offsets = gait_phase_offsets(gait)
        self.kp = kp
        self.kd = kd

    def act(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (18,):
            raise DistillkitError("expected an 18-dimensional observation")
        q = obs[_POS]
        qd = obs[_VEL]
        phase_state = int(np.argmax(obs[_PHASE]))
        iters = obs[_ITERS]
        command = obs[_COMMAND]

        theta = (phase_state * QUARTER_STEPS + iters) * OMEGA * DT
        # the environment integrates before scoring, so track the reference
        # one phase step ahead
        pos, vel, acc = leg_references(theta + OMEGA * DT, command,
                                       self.offsets)
        # damping feedback follows the base-gait velocity; the stride-shape
        # harmonic is handled entirely by the feedforward inversion
        vel_base = leg_base_velocity(theta + OMEGA * DT, command,
                                     self.offsets)
        feedforward = pos + (acc + DAMPING * vel) / STIFFNESS
        action = feedforward + self.kp * (pos - q) + self.kd * (vel_base - qd)
        return np.clip(action, -ACTION_LIMIT, ACTION_LIMIT)


def make_env(gait: str, command: float = 0.5, episode_length: int = 1000,
             init_noise: float = INIT_NOISE) -> PhaseGaitEnv:
    return PhaseGaitEnv(gait, command, episode_length, init_noise)


def make_expert(gait: str) -> GaitExpert:
    return GaitExpert(gait)
