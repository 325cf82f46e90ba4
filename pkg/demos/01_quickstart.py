"""
Eyes closed, eyes open
======================

Run the full chain on the built-in eyes-closed scenario and look for alpha
on the occipital channels.
"""

import numpy as np

from ironstream import dsp, subject
from ironstream.pipeline import session_volts, simulate_packets

montage = subject.default_montage(8)
scenario = subject.builtin_scenario("eyes_closed", seed=0)
print("events:", [(e.start, e.end, e.kind.value) for e in scenario.events])

# Synthesis, electrodes, RC, bias loop, PGA and converter, packetized like
# the server would send it.
sim = simulate_packets(scenario, montage)
print(f"{sim.frames} frames, {sim.sensor_records} sensor records, {len(sim.packets)} packets")

# Decode back to volts and band-limit to 1-40 Hz.
volts, meta = session_volts(sim.packets)
filtered = dsp.bandpass(volts, rate=meta["rate"])

# %%
# Alpha detection in 2 s windows: 8-14 Hz power over the flanking bands.
for w in dsp.detect_alpha(filtered, meta["rate"], montage):
    print(f"{w.start:4.1f}-{w.end:4.1f} s  ratio {w.ratio:8.2f}  {'alpha' if w.detected else '-'}")

# %%
# Occipital spectrum around the alpha peak, eyes closed only.
rate = meta["rate"]
occ = montage.indices(montage.occipital_set)
p = dsp.psd(filtered[occ, 2 * rate:8 * rate], rate)
peak = p.freqs[np.argmax(p.power.mean(axis=0))]
print(f"occipital PSD peak at {peak:.1f} Hz")
