"""Simulation of V_Si- centre quantum memory nodes in 4H-SiC.

Lattice sampling, conditional nuclear dynamics under DDrf control,
detection statistics, CCE coherence and electron-mediated gates.
"""

from sicqmn.lattice import (
    IsotopeConfig,
    LatticeSpec,
    NuclearSpin,
    SpinBath,
    bath_statistics,
    concentration_pair,
    generate_supercell,
    sample_bath,
)
from sicqmn.physics import (
    C13,
    SI29,
    ElectronLevel,
    HyperfineVector,
    PhysicalConstants,
    conditional_hamiltonian,
    hyperfine_vector,
    rotating_frame_hamiltonian,
    tilt_angle,
    transition_frequencies,
)
from sicqmn.pulses import (
    ConditionalUnitary,
    DdrfParams,
    PhaseSchedule,
    calibrate_rabi,
    cpmg_unitary,
    ddrf_unitary,
    electron_pulse,
    phase_schedule,
    segment_unitary,
)
from sicqmn.detection import (
    CensusParams,
    CensusResult,
    accessible_qubits,
    census_campaign,
    contrast,
    contrast_map,
    readout_signal,
    spectrum,
)
from sicqmn.coherence import CoherenceCurve, T2Fit, cce_coherence, coherence_vs_concentration, fit_t2
from sicqmn.fitting import StretchedExponentialDecay
from sicqmn.gates import (
    CNOT,
    FidelityMatrix,
    GateBath,
    GateSpec,
    conditional_pi2,
    fidelity_matrix,
    gate_fidelity,
    nn_cnot,
    reference_bath,
)

__version__ = "0.1.0"

__all__ = [
    "C13",
    "CNOT",
    "CensusParams",
    "CensusResult",
    "CoherenceCurve",
    "ConditionalUnitary",
    "DdrfParams",
    "ElectronLevel",
    "FidelityMatrix",
    "GateBath",
    "GateSpec",
    "HyperfineVector",
    "IsotopeConfig",
    "LatticeSpec",
    "NuclearSpin",
    "PhaseSchedule",
    "PhysicalConstants",
    "SI29",
    "SpinBath",
    "StretchedExponentialDecay",
    "T2Fit",
    "accessible_qubits",
    "bath_statistics",
    "calibrate_rabi",
    "cce_coherence",
    "census_campaign",
    "coherence_vs_concentration",
    "concentration_pair",
    "conditional_hamiltonian",
    "conditional_pi2",
    "contrast",
    "contrast_map",
    "cpmg_unitary",
    "ddrf_unitary",
    "electron_pulse",
    "fidelity_matrix",
    "fit_t2",
    "gate_fidelity",
    "generate_supercell",
    "hyperfine_vector",
    "nn_cnot",
    "phase_schedule",
    "readout_signal",
    "reference_bath",
    "rotating_frame_hamiltonian",
    "sample_bath",
    "segment_unitary",
    "spectrum",
    "tilt_angle",
    "transition_frequencies",
]
