pub mod atlas;
pub mod blobshape;
pub mod embedding;
pub mod genprovider;
pub mod roi;
pub mod versioning;
