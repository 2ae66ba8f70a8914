//! Deterministic discrete-event simulator of multi-gateway LoRaWAN
//! networks with cloud-edge learning in the loop.
//!
//! The crate is organized around the pipeline a control message travels:
//!
//! - [`phy`] — time on air, link budgets, collisions with capture.
//! - [`nn`] — the small MLP substrate with analytic backprop shared by
//!   every learned component.
//! - [`edge`] — terminal-node fallback decisions from success history
//!   plus closed-form link priors.
//! - [`distill`] — online teacher-to-student knowledge distillation with
//!   shift/scale logit transforms.
//! - [`scheduler`] — cloud-side downlink dispatch: actor-critic over
//!   pending control messages with Lyapunov overload queues for gateway
//!   load balancing.
//! - [`sim`] — the event loop tying nodes, gateways, and the cloud
//!   together; deterministic for a fixed (config, seed).
//! - [`harness`] — scenario grids, ablation variants, CSV emission.

pub mod config;
pub mod distill;
pub mod edge;
pub mod error;
pub mod harness;
pub mod nn;
pub mod phy;
pub mod scheduler;
pub mod sim;
pub mod teacher;
