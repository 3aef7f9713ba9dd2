pub mod artifacts;
pub mod coverage_plan;
pub mod kpi;
pub mod scene_io;
pub mod svg;
pub mod sweep;
