//! The worked example: two contractor schemas and the requester schema.

pub const HOSPITAL: &str = include_str!("../scripts/hospital.sql");
pub const STATISTICS: &str = include_str!("../scripts/statistics.sql");
pub const REQUESTER: &str = include_str!("../scripts/requester.sql");

/// Share of young Ebola patients per quarter.
pub const PERCENTAGE_QUERY: &str =
    "select location, diagnosis, (patients/under10)*100 as percentage from V where age < 10";

/// Treated patients by quarter and diagnosis.
pub const TOTALS_QUERY: &str =
    "select location, diagnosis, sum(patients) as treated from V group by location, diagnosis";

pub const UPDATE_STATEMENT: &str = "update V set inhabitants = 199000, under10 = 49000 where rCode = 3";
pub const DELETE_STATEMENT: &str = "delete from V2 where rCode = 5";
