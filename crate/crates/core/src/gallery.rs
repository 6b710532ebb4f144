//! Bundled example problems.

use crate::error::{GeodomError, Result};
use crate::problem::ProblemDef;

macro_rules! entry {
    ($name:literal) => {
        ($name, include_str!(concat!("../gallery/", $name, ".json")))
    };
}

pub const GALLERY: [(&str, &str); 11] = [
    entry!("quadrant_sqrtxy"),
    entry!("quadrant_xy"),
    entry!("punctured_plane"),
    entry!("half_plane"),
    entry!("unit_disk"),
    entry!("wavy_half_plane"),
    entry!("flat_cylinder"),
    entry!("cylinder_minus_helix"),
    entry!("cylinder_minus_helix_perturbed"),
    entry!("harmonic_half_plane"),
    entry!("free_particle_quadrant"),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    GALLERY.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    GALLERY.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<ProblemDef> {
    let text = source(name).ok_or_else(|| {
        GeodomError::Input(format!(
            "unknown gallery problem `{name}` (known: {})",
            names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    ProblemDef::from_json(text)
}
