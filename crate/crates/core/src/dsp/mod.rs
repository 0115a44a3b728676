//! Filter design and the carrier-domain acquisition model.

mod carrier;
mod filter;

pub use carrier::{modulate_carrier, synchronous_demodulate, CARRIER_HZ, CARRIER_RATE_HZ, DEMOD_CUTOFF_HZ, WORKING_RATE_HZ};
pub use filter::{
    apply_filter, design_bandpass, design_lowpass2, Biquad, BandpassSpec, FilterKind, FilterRealization, FilterState,
    DEFAULT_MAX_ORDER,
};
