"""Coupled C-V2X Mode 4 sidelink + on-ramp merging simulator.

Subpackages and modules:
  grid      -- sidelink resource addressing (SSRs, reservation mapping, selection windows)
  phy       -- log-distance channel, SINR adjudication, RSSI measurement
  mac       -- SCI codec, sensing history, SB-SPS and ESB-SPS schedulers
  mobility  -- road geometry, kinematic bicycle model, collision geometry
  control   -- beacons, neighbor estimation, CACC modes, two-point steering
  rl        -- merging policy: rewards, beta-policy nets, PPO trainer
  metrics   -- AoI/position-error outage ratios, control-cost objective
  scenario  -- coupled per-millisecond simulation harness
  cli       -- command line entry points
"""

__version__ = "0.1.0"
