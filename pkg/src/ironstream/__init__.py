"""Emulated multichannel EEG acquisition: synthetic subject, analog front end,
24-bit converter, sensor board, DSP, and a framed streaming protocol."""

from .ads1299 import (
    Acquisition,
    AcquisitionConfig,
    FrameBlock,
    LeadOffFreq,
    RegisterFile,
    SampleFrame,
    acquire,
    convert,
    decode,
    frames_to_volts,
    read_register,
    write_register,
)
from .afe import BiasLoopSpec, RcFilterSpec, apply_afe, bias_feedback
from .dsp import (
    BandpassSpec,
    band_power,
    bandpass,
    cmrr_estimate,
    detect_alpha,
    detect_blink,
    detect_chew,
    notch,
    psd,
    rms,
)
from .errors import (
    AddressingError,
    CodecError,
    ConfigurationError,
    DomainError,
    IronstreamError,
    ProtocolMisuseError,
)
from .impedance import ImpedanceReport, Quality, classify, estimate_impedance, measure
from .power import budget
from .subject import (
    ElectrodeKind,
    ElectrodeModel,
    Event,
    EventKind,
    Montage,
    SignalScenario,
    builtin_scenario,
    default_montage,
    synthesize,
)

__version__ = "0.1.0"
