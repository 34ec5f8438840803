"""Encoder + decoder bundle with checkpoint save/load."""
from __future__ import annotations

import numpy as np

from .decoder import Decoder, DecoderConfig, Rollout
from .encoder import Encoder, EncoderConfig
from .params import CheckpointError, ParamStore, read_checkpoint, save_checkpoint


class MateModel:
    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, seed: int = 0,
                 zero_output: bool = False):
        if enc_cfg.t_obs != dec_cfg.t_obs:
            raise ValueError("encoder and decoder disagree on t_obs")
        if enc_cfg.num_edge_types != dec_cfg.num_edge_types:
            raise ValueError("encoder and decoder disagree on the number of edge types")
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.store = ParamStore(seed)
        self.encoder = Encoder(enc_cfg, self.store)
        self.decoder = Decoder(dec_cfg, self.store, zero_output=zero_output)

    @property
    def t_obs(self) -> int:
        return self.dec_cfg.t_obs

    @property
    def t_pred(self) -> int:
        return self.dec_cfg.t_pred

    def forward(self, positions: np.ndarray, mode: str = "train", dt: float | None = None,
                record_steps=()) -> tuple:
        """``positions [B, T, N, 2]`` -> ``(z, rollout)``."""
        positions = np.asarray(positions, dtype=np.float64)
        if positions.ndim == 3:
            positions = positions[None]
        z = self.encoder(positions[:, :self.t_obs])
        return z, self.decoder.rollout(positions, z, mode=mode, dt=dt, record_steps=record_steps)

    def predict(self, positions: np.ndarray, dt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Future positions ``[B, t_pred, N, 2]`` and latent ``z [B, N, N, K]``."""
        z, ro = self.forward(np.asarray(positions)[..., :self.t_obs, :, :], mode="eval", dt=dt)
        return ro.positions[:, self.t_obs:], z.value

    def meta(self) -> dict:
        return {"encoder": self.enc_cfg.to_dict(), "decoder": self.dec_cfg.to_dict()}

    def save(self, path, extra: dict | None = None):
        meta = self.meta()
        if extra:
            meta.update(extra)
        save_checkpoint(path, self.store, meta)

    @classmethod
    def load(cls, path) -> "MateModel":
        meta, state = read_checkpoint(path)
        try:
            enc = EncoderConfig(**meta["encoder"])
            dec = DecoderConfig(**meta["decoder"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad model config ({exc})") from exc
        model = cls(enc, dec)
        model.store.load_state(state)
        model.extra = {k: v for k, v in meta.items() if k not in ("encoder", "decoder")}
        return model
