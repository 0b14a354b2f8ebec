"""Subflow connection matrices for MPTCP multi-homing and single-AP TCP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hlwnet.channel import ChannelState


@dataclass(frozen=True)
class Association:
    chi: np.ndarray          # (N_a, N_u) bool
    n_subflows_per_ue: int

    @property
    def n_aps(self) -> int:
        return self.chi.shape[0]

    @property
    def n_ues(self) -> int:
        return self.chi.shape[1]

    def ue_aps(self, j: int) -> np.ndarray:
        """Ascending AP indices serving UE j."""
        return np.flatnonzero(self.chi[:, j])

    def ap_ues(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.chi[i, :])

    def subflow_indices(self) -> np.ndarray:
        """(N_u, N_f) ascending AP indices per UE; requires a uniform subflow count."""
        counts = self.chi.sum(axis=0)
        if not np.all(counts == self.n_subflows_per_ue):
            raise ValueError("subflow count differs across UEs")
        # column-major nonzero walks UE by UE, AP ascending within each UE
        rows, cols = np.nonzero(self.chi.T)
        return cols.reshape(self.n_ues, self.n_subflows_per_ue)


def _stable_rank(values: np.ndarray) -> np.ndarray:
    """Indices sorted by descending value, ties broken by lowest index."""
    return np.lexsort((np.arange(values.size), -values))


def mptcp_association(channel: ChannelState, topology, n_f: int) -> Association:
    """WiFi plus the ``n_f - 1`` LiFi APs of highest SINR for every UE."""
    lifi = topology.lifi_indices
    if not 2 <= n_f <= 1 + lifi.size:
        raise ValueError(f"n_f must lie in [2, {1 + lifi.size}], got {n_f}")
    sinr = channel.sinr
    chi = np.zeros(sinr.shape, dtype=bool)
    chi[topology.wifi_index, :] = True
    for j in range(sinr.shape[1]):
        best = lifi[_stable_rank(sinr[lifi, j])[: n_f - 1]]
        chi[best, j] = True
    return Association(chi, n_f)


def sss_association(channel: ChannelState, by: str = "sinr") -> Association:
    """Single best AP per UE (signal strength strategy).

    ``by`` selects the ranking quantity: "sinr" (default) or "capacity".
    np.argmax returns the first maximum, which gives lowest-index tie-breaking.
    """
    if by not in ("sinr", "capacity"):
        raise ValueError("by must be 'sinr' or 'capacity'")
    score = channel.sinr if by == "sinr" else channel.capacity
    if score.shape[0] < 1:
        raise ValueError("need at least one AP")
    best = np.argmax(score, axis=0)
    chi = np.zeros(score.shape, dtype=bool)
    chi[best, np.arange(score.shape[1])] = True
    return Association(chi, 1)
