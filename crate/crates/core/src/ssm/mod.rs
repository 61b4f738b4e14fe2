//! Selective state-space layers.

mod block;
mod discretize;
pub mod scan;

pub use block::{init_bimamba, selection_project, BiMamba, MambaBlock, MambaConfig, Selection, SeqMixer};
pub use discretize::discretize;
pub use scan::{
    combine, selective_scan, selective_scan_parallel, selective_scan_sequential, AffinePair, ScanMode, SCAN_BLOCK,
};
