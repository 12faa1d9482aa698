pub mod case;
pub mod devices;
pub mod format;
pub mod indices;
pub mod linalg;
pub mod lintf;
pub mod network;
pub mod vectorfit;
