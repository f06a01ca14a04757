//! Automated laparoscope field-of-view control in a desk-scale simulator.
//!
//! The pipeline per control step: locate the tool tip and its depth
//! ([`perception`]), choose an image target from the usage heatmap
//! ([`viewgen`]), measure and correct roll against the natural line of sight
//! ([`mrc`]), and command the scope through the trocar with the null-space
//! controller ([`controller`]). [`scenario`] steps all of it against the
//! synthetic [`scene`]; [`service`] streams a live session over websocket.
//!
//! Units are mm and radians. Camera frame: +z forward, +x right, +y down.

pub mod controller;
pub mod geometry;
pub mod io;
pub mod mrc;
pub mod perception;
pub mod scenario;
pub mod scene;
pub mod service;
pub mod viewgen;
