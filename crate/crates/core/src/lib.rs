pub mod active;
pub mod doc;
pub mod eval;
pub mod gradcheck;
pub mod ingest;
pub mod ledger;
pub mod network;
pub mod noise;
pub mod outlier;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod vat;
