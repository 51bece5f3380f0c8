"""Adapter from the simulation objects to the compiled core's flat signature."""

from __future__ import annotations

from . import _core
from .sim import ENERGY_MODELS
from .decode import DECODER_CODES

NAME = "compiled"

decode_csr = _core.decode_csr
decode_batch = _core.decode_batch


def simulate(setup, rng, state, acc, num_frames, measure, theta):
    config = setup.config
    frames = _core.simulate(
        rng.bit_generator,
        config.num_devices,
        config.frame_length,
        config.update_prob,
        config.sigma,
        config.harvest_prob,
        setup.capacity,
        ENERGY_MODELS[setup.energy_model],
        setup.deg_cdf,
        setup.harvest_cdf,
        DECODER_CODES[setup.scheme.decoder],
        setup.max_iter,
        setup.candidate_cap,
        state.frame,
        num_frames,
        measure,
        theta,
        state.battery,
        state.last_gen,
        acc.battery_hist,
        acc.aoi_hist,
        acc.frame_generated,
        acc.frame_lost,
        acc.frame_exceed,
        acc.counters,
    )
    state.frame += frames
