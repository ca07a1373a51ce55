//! CNN and transformer feature pyramids.

pub mod pvt;
pub mod resnet;

pub use pvt::PvtPyramid;
pub use resnet::ResNetPyramid;
