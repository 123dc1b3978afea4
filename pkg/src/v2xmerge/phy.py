"""Log-distance channel model, per-subframe SINR adjudication and RSSI measurement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ChannelConfig:
    tx_power_dbm: float = 23.0
    pl0_db: float = 47.0          # path loss at the reference distance
    exponent: float = 2.5
    ref_dist_m: float = 1.0
    noise_dbm: float = -95.0
    sinr_threshold_db: float = 2.0
    sensitivity_dbm: float = -90.5
    shadow_sigma_db: float = 0.0  # 0 disables shadowing
    shadow_seed: int = 0
    delivery_lag_ms: int = 4      # MAC decode -> application visibility

    @property
    def noise_mw(self) -> float:
        return 10.0 ** (self.noise_dbm / 10.0)


def path_loss_db(d: float, cfg: ChannelConfig) -> float:
    """Log-distance path loss; distances below the reference clamp to it."""
    d = max(d, cfg.ref_dist_m)
    return cfg.pl0_db + 10.0 * cfg.exponent * math.log10(d / cfg.ref_dist_m)


def _shadow_db(cfg: ChannelConfig, sender: int, receiver: int) -> float:
    # static per-link shadowing so repeated runs stay deterministic
    if cfg.shadow_sigma_db <= 0.0:
        return 0.0
    seq = np.random.SeedSequence((cfg.shadow_seed, min(sender, receiver), max(sender, receiver)))
    rng = np.random.Generator(np.random.Philox(key=seq.generate_state(2, np.uint64)))
    return float(rng.normal(0.0, cfg.shadow_sigma_db))


def rx_power_dbm(d: float, cfg: ChannelConfig, sender: int = 0, receiver: int = 0) -> float:
    return cfg.tx_power_dbm - path_loss_db(d, cfg) + _shadow_db(cfg, sender, receiver)


@dataclass(frozen=True)
class Transmission:
    """One SCI+payload broadcast occupying a single SSR in the current subframe."""

    sender: int
    subchannel: int
    x: float
    y: float
    sci: object = None
    payload: object = None
    power_dbm: float = 23.0


@dataclass(frozen=True)
class Reception:
    sender: int
    receiver: int
    decoded: bool
    rsrp_dbm: float
    reason: str  # ok | half_duplex | collision | below_sensitivity


def _power_matrix(txs: list[Transmission], rx_ids: list[int], rx_xy: np.ndarray,
                  cfg: ChannelConfig) -> np.ndarray:
    """Received power in mW, shape (n_tx, n_rx)."""
    out = np.empty((len(txs), len(rx_xy)))
    for i, tx in enumerate(txs):
        d = np.hypot(rx_xy[:, 0] - tx.x, rx_xy[:, 1] - tx.y)
        d = np.maximum(d, cfg.ref_dist_m)
        pl = cfg.pl0_db + 10.0 * cfg.exponent * np.log10(d / cfg.ref_dist_m)
        p = tx.power_dbm - pl
        if cfg.shadow_sigma_db > 0.0:
            p = p + np.array([_shadow_db(cfg, tx.sender, rid) for rid in rx_ids])
        out[i] = 10.0 ** (p / 10.0)
    return out


def decode_table(txs: list[Transmission], rx_ids: list[int], rx_xy: np.ndarray,
                 cfg: ChannelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised adjudication: (decoded, rsrp_dbm), both shaped (n_tx, n_rx).

    Same rules as adjudicate_subframe: co-subchannel transmissions interfere,
    vehicles transmitting this subframe (and the sender itself) decode nothing,
    decoding needs power above sensitivity and SINR at or above threshold.
    """
    rx_xy = np.asarray(rx_xy, dtype=float)
    power = _power_matrix(txs, rx_ids, rx_xy, cfg)
    with np.errstate(divide="ignore"):
        rsrp_dbm = 10.0 * np.log10(power)
    senders = {t.sender for t in txs}
    rx_is_sender = np.array([rid in senders for rid in rx_ids])
    decoded = np.zeros(power.shape, dtype=bool)
    subs = np.array([t.subchannel for t in txs])
    for z in np.unique(subs):
        idxs = np.nonzero(subs == z)[0]
        total = power[idxs].sum(axis=0)
        for i in idxs:
            p = power[i]
            sinr_db = 10.0 * np.log10(p / (cfg.noise_mw + (total - p)))
            ok = (~rx_is_sender) & (rsrp_dbm[i] >= cfg.sensitivity_dbm) \
                & (sinr_db >= cfg.sinr_threshold_db)
            ok[[j for j, rid in enumerate(rx_ids) if rid == txs[i].sender]] = False
            decoded[i] = ok
    return decoded, rsrp_dbm


def adjudicate_subframe(txs: list[Transmission], rx_ids: list[int],
                        rx_xy: np.ndarray, cfg: ChannelConfig) -> list[Reception]:
    """Decide every (transmission, receiver) outcome for one subframe.

    Transmissions on the same subchannel interfere; different subchannels do
    not.  A vehicle transmitting in this subframe receives nothing
    (half-duplex).  Decoding needs received power above the sensitivity and
    SINR at or above the threshold.
    """
    if not txs:
        return []
    rx_xy = np.asarray(rx_xy, dtype=float)
    power = _power_matrix(txs, rx_ids, rx_xy, cfg)
    senders = {t.sender for t in txs}
    by_sub: dict[int, list[int]] = {}
    for i, t in enumerate(txs):
        by_sub.setdefault(t.subchannel, []).append(i)
    out: list[Reception] = []
    for z, idxs in sorted(by_sub.items()):
        total = power[idxs].sum(axis=0)
        for i in idxs:
            p = power[i]
            with np.errstate(divide="ignore"):
                rsrp = 10.0 * np.log10(p)
                sinr_db = 10.0 * np.log10(p / (cfg.noise_mw + (total - p)))
            tx = txs[i]
            for j, rid in enumerate(rx_ids):
                if rid == tx.sender:
                    continue
                if rid in senders:
                    out.append(Reception(tx.sender, rid, False, float(rsrp[j]), "half_duplex"))
                elif rsrp[j] < cfg.sensitivity_dbm:
                    out.append(Reception(tx.sender, rid, False, float(rsrp[j]), "below_sensitivity"))
                elif sinr_db[j] < cfg.sinr_threshold_db:
                    reason = "collision" if len(idxs) > 1 else "below_sensitivity"
                    out.append(Reception(tx.sender, rid, False, float(rsrp[j]), reason))
                else:
                    out.append(Reception(tx.sender, rid, True, float(rsrp[j]), "ok"))
    return out


def subframe_rssi_mw(txs: list[Transmission], rx_ids: list[int], rx_xy: np.ndarray,
                     sc: int, cfg: ChannelConfig,
                     transmitting: np.ndarray | None = None) -> np.ndarray:
    """Per-receiver, per-subchannel RSSI in mW (noise floor plus all received energy).

    Rows of vehicles that transmit in this subframe are NaN: half-duplex
    operation leaves them without a measurement.
    """
    rx_xy = np.asarray(rx_xy, dtype=float)
    rssi = np.full((len(rx_xy), sc), cfg.noise_mw)
    if txs:
        power = _power_matrix(txs, rx_ids, rx_xy, cfg)
        for i, t in enumerate(txs):
            rssi[:, t.subchannel] += power[i]
    if transmitting is not None and transmitting.any():
        rssi[transmitting] = np.nan
    return rssi


@dataclass
class DeliveryQueue:
    """Holds decoded packets until the MAC-to-application lag has elapsed."""

    lag_ms: int = 4
    _due: dict = field(default_factory=dict)

    def push(self, now: int, item) -> None:
        self._due.setdefault(now + self.lag_ms, []).append(item)

    def pop_due(self, now: int) -> list:
        return self._due.pop(now, [])
