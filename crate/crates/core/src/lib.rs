pub mod fixtures;
pub mod gripper;
pub mod mesh;
pub mod objective;
pub mod planner;
pub mod pointcloud;
pub mod pose;
pub mod quality;
pub mod raycast;
