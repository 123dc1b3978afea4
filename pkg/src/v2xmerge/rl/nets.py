"""Policy and value networks.

The policy outputs a factorised Beta distribution over the two actuator
channels (acceleration, steering), which keeps all probability mass
inside the actuator limits without clipping tricks. Raw network outputs
go through softplus(raw + 1); the common softplus(raw) + 1 variant sits
behind the conc_min_one flag.

Everything runs in float64: the nets are tiny and the acceptance checks
(gradcheck, bit-stable retraining) want the headroom.
"""

import math
from typing import Sequence, Tuple

import torch
from torch import nn
from torch.distributions import Beta

STATE_DIM = 9
ACTION_DIM = 2

# Rough magnitudes of the state fields, used as a fixed diagonal input
# scaling: [x, y_rear, y_front, v, phi, dx_front, dv_front, dx_rear, dv_rear]
STATE_SCALE = (175.0, 5.0, 5.0, 25.0, 0.5, 100.0, 10.0, 100.0, 10.0)


def _mlp(sizes: Sequence[int], out_gain: float) -> nn.Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        lin = nn.Linear(sizes[i], sizes[i + 1])
        last = i == len(sizes) - 2
        nn.init.orthogonal_(lin.weight, gain=out_gain if last else math.sqrt(2.0))
        nn.init.zeros_(lin.bias)
        layers.append(lin)
        if not last:
            layers.append(nn.Tanh())
    return nn.Sequential(*layers)


class PolicyNet(nn.Module):
    """Beta policy over (acceleration, steering angle)."""

    def __init__(self, hidden: int = 64,
                 act_low: Sequence[float] = (-3.0, -math.radians(15.0)),
                 act_high: Sequence[float] = (3.0, math.radians(15.0)),
                 init_conc: float = 48.0, conc_min_one: bool = False):
        super().__init__()
        self.net = _mlp([STATE_DIM, hidden, hidden, 2 * ACTION_DIM], out_gain=0.01)
        self.conc_min_one = conc_min_one
        # bias the head so both concentrations start at init_conc: RL-phase
        # action sums are charged at the terminal, so a wide starting beta
        # buries every successful merge under its own exploration noise
        if init_conc is not None:
            raw0 = math.log(math.expm1(init_conc - 1.0 if conc_min_one else init_conc))
            if conc_min_one:
                raw0 = max(raw0, -20.0)
            else:
                raw0 -= 1.0
            with torch.no_grad():
                self.net[-1].bias.fill_(raw0)
        self.register_buffer("scale", torch.tensor(STATE_SCALE, dtype=torch.float64))
        self.register_buffer("act_low", torch.tensor(act_low, dtype=torch.float64))
        self.register_buffer("act_high", torch.tensor(act_high, dtype=torch.float64))
        self.double()

    def _params(self, states: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        raw = self.net(states / self.scale)
        # softplus keeps the parameters positive; the floor guards the
        # degenerate limit when raw saturates far negative.
        if self.conc_min_one:
            pos = nn.functional.softplus(raw) + 1.0
        else:
            pos = nn.functional.softplus(raw + 1.0)
        pos = pos.clamp_min(1e-3)
        return pos[..., :ACTION_DIM], pos[..., ACTION_DIM:]

    def distribution(self, states: torch.Tensor) -> Beta:
        alpha, beta = self._params(states)
        return Beta(alpha, beta)

    def _to_unit(self, actions: torch.Tensor) -> torch.Tensor:
        span = self.act_high - self.act_low
        u = (actions - self.act_low) / span
        return u.clamp(1e-9, 1.0 - 1e-9)

    def log_prob(self, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        """Log density of physical actions, affine change of variables included."""
        dist = self.distribution(states)
        span = self.act_high - self.act_low
        return (dist.log_prob(self._to_unit(actions)) - torch.log(span)).sum(-1)

    @torch.no_grad()
    def sample(self, states: torch.Tensor,
               generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
        alpha, beta = self._params(states)
        # Beta via two gammas so the draw threads an explicit generator
        g1 = torch._standard_gamma(alpha, generator=generator)
        g2 = torch._standard_gamma(beta, generator=generator)
        u = (g1 / (g1 + g2)).clamp(1e-9, 1.0 - 1e-9)
        span = self.act_high - self.act_low
        actions = self.act_low + u * span
        logp = (Beta(alpha, beta).log_prob(u) - torch.log(span)).sum(-1)
        return actions, logp

    @torch.no_grad()
    def mean_action(self, states: torch.Tensor) -> torch.Tensor:
        """Deterministic action: distribution mean mapped to actuator range."""
        alpha, beta = self._params(states)
        u = alpha / (alpha + beta)
        return self.act_low + u * (self.act_high - self.act_low)


class ValueNet(nn.Module):
    def __init__(self, hidden: int = 64):
        super().__init__()
        self.net = _mlp([STATE_DIM, hidden, hidden, 1], out_gain=1.0)
        self.register_buffer("scale", torch.tensor(STATE_SCALE, dtype=torch.float64))
        self.double()

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        return self.net(states / self.scale).squeeze(-1)
