pub mod advisor;
pub mod bo;
pub mod forest;
pub mod space;
pub mod strategy;
