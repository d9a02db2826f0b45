//! Images on a 4-connected lattice: container, binary PGM I/O, seeded noise,
//! the anisotropic ROF MAP solver and the metrics used to compare MAP and
//! posterior-mean reconstructions.

pub(crate) mod image;
mod metrics;
mod pgm;
mod rof;

pub use image::{add_gaussian_noise, synthetic_phantom, tv_eval, Edges, Image, NoiseSpec};
pub use metrics::{plateau_fraction, psnr, DEFAULT_PLATEAU_TOL};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use rof::{rof_map, rof_objective, RofOutcome, RofSolver};
