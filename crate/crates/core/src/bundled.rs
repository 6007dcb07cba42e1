//! Example configs shipped with the crate, one per builtin manifold plus the
//! bare SL2R and product geometries.

pub const CONFIGS: [(&str, &str); 10] = [
    ("flat-torus", include_str!("../configs/flat-torus.toml")),
    ("flat-half-turn", include_str!("../configs/flat-half-turn.toml")),
    ("flat-quarter-turn", include_str!("../configs/flat-quarter-turn.toml")),
    ("seifert-weber", include_str!("../configs/seifert-weber.toml")),
    ("poincare-sphere", include_str!("../configs/poincare-sphere.toml")),
    ("nil-cube", include_str!("../configs/nil-cube.toml")),
    ("sol-golden", include_str!("../configs/sol-golden.toml")),
    ("sl2r", include_str!("../configs/sl2r.toml")),
    ("s2xr", include_str!("../configs/s2xr.toml")),
    ("h2xr", include_str!("../configs/h2xr.toml")),
];

pub fn get(name: &str) -> Option<&'static str> {
    CONFIGS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    CONFIGS.iter().map(|(n, _)| *n)
}
