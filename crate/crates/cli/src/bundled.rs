//! Example problem documents shipped with the binary.

macro_rules! doc {
    ($name:literal) => {
        ($name, include_str!(concat!("../problems/", $name)))
    };
}

/// Solved by `reproduce-paper` besides the utility tables.
pub const REPRODUCTION_CASES: &[(&str, &str)] = &[
    doc!("as_unknown_cost.toml"),
    doc!("as_unknown_complexity.toml"),
    doc!("satellite_row1.toml"),
    doc!("satellite_row2.toml"),
];

pub const CALIBRATIONS: &[(&str, &str)] = &[
    doc!("calibrate_satellite_row1.toml"),
    doc!("calibrate_satellite_row2.toml"),
];

/// Every bundled document.
pub const ALL: &[(&str, &str)] = &[
    doc!("as_unknown_complexity.toml"),
    doc!("as_unknown_cost.toml"),
    doc!("calibrate_satellite_row1.toml"),
    doc!("calibrate_satellite_row2.toml"),
    doc!("mh_rb_k1.5_c0.1_s0.1.toml"),
    doc!("mh_rb_k1.5_c0.1_s0.4.toml"),
    doc!("mh_rb_k1.5_c0.4_s0.1.toml"),
    doc!("mh_rb_k1.5_c0.4_s0.4.toml"),
    doc!("mh_rb_k2.5_c0.1_s0.1.toml"),
    doc!("mh_rb_k2.5_c0.1_s0.4.toml"),
    doc!("mh_rb_k2.5_c0.4_s0.1.toml"),
    doc!("mh_rb_k2.5_c0.4_s0.4.toml"),
    doc!("mh_rpi_k1.5_c0.1_s0.1.toml"),
    doc!("mh_rpi_k1.5_c0.1_s0.4.toml"),
    doc!("mh_rpi_k1.5_c0.4_s0.1.toml"),
    doc!("mh_rpi_k1.5_c0.4_s0.4.toml"),
    doc!("mh_rpi_k2.5_c0.1_s0.1.toml"),
    doc!("mh_rpi_k2.5_c0.1_s0.4.toml"),
    doc!("mh_rpi_k2.5_c0.4_s0.1.toml"),
    doc!("mh_rpi_k2.5_c0.4_s0.4.toml"),
    doc!("satellite_row1.toml"),
    doc!("satellite_row2.toml"),
    doc!("sweep_complexity.toml"),
    doc!("sweep_cost.toml"),
    doc!("sweep_uncertainty.toml"),
];
