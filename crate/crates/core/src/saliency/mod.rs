pub mod iqr;
pub mod occlusion;
pub mod pipeline;
