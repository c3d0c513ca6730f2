//! Simulation, control and data products for a winch-tethered
//! water-quality probe carried by an autonomous surface vehicle.
//!
//! The physics and the winch controller are generic over the scalar type;
//! the aliases at the crate root fix it to `f64`.

pub mod asv;
pub mod controller;
pub mod datalog;
pub mod field;
pub mod geo;
pub mod hydro;
pub mod mission;
pub mod scalar;
pub mod scenario;
pub mod session;
pub mod specs;
pub mod units;

pub use geo::GeoPoint;
pub use hydro::RelayCommand;
pub use scalar::Scalar;

pub type ProbeSpec = specs::ProbeSpec<f64>;
pub type WinchSpec = specs::WinchSpec<f64>;
pub type PlatformSpec = specs::PlatformSpec<f64>;
pub type StructuralCheck = specs::StructuralCheck<f64>;
pub type Quantity = units::Quantity<f64>;
pub type PlantState = hydro::PlantState<f64>;
pub type Environment = hydro::Environment<f64>;
pub type Bathymetry = hydro::Bathymetry<f64>;
pub type Obstruction = hydro::Obstruction<f64>;
pub type ControllerConfig = controller::ControllerConfig<f64>;
pub type ControllerState = controller::ControllerState<f64>;
pub type ControlInput = controller::ControlInput<f64>;
pub type WinchController = controller::WinchController<f64>;
