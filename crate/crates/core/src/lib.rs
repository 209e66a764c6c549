pub mod ctl;
pub mod digest;
pub mod hostnym;
pub mod ids;
pub mod metrics;
pub mod netfabric;
pub mod nymcore;
pub mod overlay;
pub mod sanivm;
pub mod snapstore;
pub mod transports;
