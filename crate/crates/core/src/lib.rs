//! Map-aware goal-directed navigation: a simulated lidar robot, online
//! particle-filter SLAM, reward shaping from map confidence and a DDPG agent.

pub mod geometry;
pub mod robot;
pub mod slam;
pub mod world;
pub mod nn;
pub mod reward;
pub mod ddpg;
pub mod config;
pub mod trainer;
pub mod checkpoint;
pub mod persist;
pub mod render;
pub mod check;
