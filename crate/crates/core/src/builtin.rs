//! Bundled demo problems.
//!
//! Three second-order single-input plants exercising the full pipeline:
//!
//! | field  | ex1                          | ex2                          | ex3                                        |
//! |--------|------------------------------|------------------------------|--------------------------------------------|
//! | A(t)   | [[0, 0.01], [-0.1, 0.15]]    | same as ex1                  | (1 + t/10) * [[0.5, -0.1], [0, -0.15]]     |
//! | B(t)   | [0, 1]'                      | [0, cos(2 pi t / 10)]'       | [1, 0]'                                    |
//! | R      | I / 0.4^2 = 6.25 I           | same as ex1                  | diag(6.25, 9.375)                          |
//! | Gamma  | I / 0.5^2 = 4 I              | same as ex1                  | exp(t/10) * diag(4, 6)                     |
//! | Pi     | Gamma                        | Gamma                        | Gamma                                      |
//! | t0, T  | 0, 10                        | 0, 10                        | 0, 5                                       |
//! | Delta  | 0.09                         | 0.09                         | 0.0735                                     |
//! | grid   | 100 intervals (0.1 s)        | 1000 intervals (0.01 s)      | 300 intervals                              |
//!
//! R and Gamma for ex1/ex2 are balls of radius 0.4 and 0.5. ex2 loses
//! controllability instantaneously at t = 2.5 and t = 7.5 where B(t) = 0.

use nalgebra::DMatrix;

use crate::grid::TimeGrid;
use crate::problem::FtsProblem;
use crate::schedule::{MatrixSchedule, ScalarProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinExample {
    Ex1,
    Ex2,
    Ex3,
}

impl BuiltinExample {
    pub const ALL: [BuiltinExample; 3] =
        [BuiltinExample::Ex1, BuiltinExample::Ex2, BuiltinExample::Ex3];

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinExample::Ex1 => "ex1",
            BuiltinExample::Ex2 => "ex2",
            BuiltinExample::Ex3 => "ex3",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "ex1" => Some(BuiltinExample::Ex1),
            "ex2" => Some(BuiltinExample::Ex2),
            "ex3" => Some(BuiltinExample::Ex3),
            _ => None,
        }
    }

    pub fn problem(&self) -> FtsProblem {
        match self {
            BuiltinExample::Ex1 => {
                let gamma = MatrixSchedule::constant(DMatrix::identity(2, 2) * 4.0);
                FtsProblem {
                    a: MatrixSchedule::constant(DMatrix::from_row_slice(
                        2,
                        2,
                        &[0.0, 0.01, -0.1, 0.15],
                    )),
                    b: MatrixSchedule::constant(DMatrix::from_row_slice(2, 1, &[0.0, 1.0])),
                    r: DMatrix::identity(2, 2) * 6.25,
                    pi: gamma.clone(),
                    gamma,
                    t0: 0.0,
                    horizon: 10.0,
                    delta: 0.09,
                }
            }
            BuiltinExample::Ex2 => {
                let mut p = BuiltinExample::Ex1.problem();
                p.b = MatrixSchedule::scalar_profile(
                    ScalarProfile::Cosine { period: 10.0 },
                    DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
                )
                .expect("static profile");
                p
            }
            BuiltinExample::Ex3 => {
                let gamma = MatrixSchedule::scalar_profile(
                    ScalarProfile::ExpRate { rate: 0.1 },
                    DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 6.0]),
                )
                .expect("static profile");
                FtsProblem {
                    a: MatrixSchedule::scalar_profile(
                        ScalarProfile::Affine { a: 1.0, b: 0.1 },
                        DMatrix::from_row_slice(2, 2, &[0.5, -0.1, 0.0, -0.15]),
                    )
                    .expect("static profile"),
                    b: MatrixSchedule::constant(DMatrix::from_row_slice(2, 1, &[1.0, 0.0])),
                    r: DMatrix::from_row_slice(2, 2, &[6.25, 0.0, 0.0, 9.375]),
                    pi: gamma.clone(),
                    gamma,
                    t0: 0.0,
                    horizon: 5.0,
                    delta: 0.0735,
                }
            }
        }
    }

    /// Synthesis grid used by default for this problem.
    pub fn default_grid(&self) -> TimeGrid {
        let (t0, horizon, n) = match self {
            BuiltinExample::Ex1 => (0.0, 10.0, 100),
            BuiltinExample::Ex2 => (0.0, 10.0, 1000),
            BuiltinExample::Ex3 => (0.0, 5.0, 300),
        };
        TimeGrid::uniform(t0, horizon, n).expect("static grid")
    }
}
