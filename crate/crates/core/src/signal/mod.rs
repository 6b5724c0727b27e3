//! Radar traces, fingerprints, synthetic data and signal-strength metrics.

pub mod fingerprint;
pub mod io;
pub mod strength;
pub mod synth;
pub mod trace;

pub use fingerprint::{
    build_fingerprint, check_normalized, normalize_block, Dataset, Fingerprint, BLOCKS, FINGERPRINT_LEN,
};
pub use io::{
    load_dataset, load_trace, regenerate, save_dataset, save_trace, DatasetManifest, ManifestEntry, MANIFEST_FILE,
    TRACE_HEADER,
};
pub use strength::{
    background_average, rrcs, snr_db, snr_from_magnitude, strength_csv, strength_table, subtracted_magnitude,
    trapezoid, RrcsEntry, SnrConfig, StrengthRow,
};
pub use synth::{
    chamber_response, generate_background, generate_dataset, mixed_difficulty, GeneratorSpec, Resonance,
    SyntheticClassSpec,
};
pub use trace::{frequency_grid, Angle, Trace, TraceMeta, SWEEP_START_HZ, SWEEP_STOP_HZ, TRACE_POINTS};
