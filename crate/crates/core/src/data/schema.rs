//! Column recognition for the battery-cycle CSV.
//!
//! Header spellings differ between dataset mirrors ("Max. Voltage Dischar. (V)",
//! "max_voltage_discharge_v", ...). Headers are compared after lowercasing and
//! dropping everything that is not an ASCII letter or digit.

use serde::{Deserialize, Serialize};

/// The nine per-cycle measurements in the source dataset, in telemetry pin order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    CycleIndex,
    DischargeTime,
    TimeAt4p15V,
    TimeConstantCurrent,
    Decrement3p6To3p4V,
    MaxVoltageDischarge,
    MinVoltageCharge,
    ChargingTime,
    TotalTime,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::CycleIndex,
        Feature::DischargeTime,
        Feature::TimeAt4p15V,
        Feature::TimeConstantCurrent,
        Feature::Decrement3p6To3p4V,
        Feature::MaxVoltageDischarge,
        Feature::MinVoltageCharge,
        Feature::ChargingTime,
        Feature::TotalTime,
    ];

    /// Columns that must be present in every input file. Total time is optional.
    pub const REQUIRED: [Feature; 8] = [
        Feature::CycleIndex,
        Feature::DischargeTime,
        Feature::TimeAt4p15V,
        Feature::TimeConstantCurrent,
        Feature::Decrement3p6To3p4V,
        Feature::MaxVoltageDischarge,
        Feature::MinVoltageCharge,
        Feature::ChargingTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::CycleIndex => "cycle_index",
            Feature::DischargeTime => "discharge_time_s",
            Feature::TimeAt4p15V => "time_at_4p15v_s",
            Feature::TimeConstantCurrent => "time_constant_current_s",
            Feature::Decrement3p6To3p4V => "decrement_3p6_3p4v_s",
            Feature::MaxVoltageDischarge => "max_voltage_discharge_v",
            Feature::MinVoltageCharge => "min_voltage_charge_v",
            Feature::ChargingTime => "charging_time_s",
            Feature::TotalTime => "total_time_s",
        }
    }

    /// Virtual pin number (V0..V8) used by the telemetry layer.
    pub fn pin(self) -> u8 {
        Feature::ALL.iter().position(|&f| f == self).unwrap() as u8
    }

    pub fn from_pin(pin: u8) -> Option<Feature> {
        Feature::ALL.get(pin as usize).copied()
    }

    fn header_prefixes(self) -> &'static [&'static str] {
        match self {
            Feature::CycleIndex => &["cycleindex"],
            Feature::DischargeTime => &["dischargetime"],
            Feature::TimeAt4p15V => &["timeat415v", "timeat4p15v"],
            Feature::TimeConstantCurrent => &["timeconstantcurrent"],
            Feature::Decrement3p6To3p4V => &["decrement3634v", "decrement3p63p4v"],
            Feature::MaxVoltageDischarge => &["maxvoltagedischar"],
            Feature::MinVoltageCharge => &["minvoltagecharg"],
            Feature::ChargingTime => &["chargingtime"],
            Feature::TotalTime => &["totaltime"],
        }
    }

    /// Recognizes a raw header or canonical name.
    pub fn from_header(header: &str) -> Option<Feature> {
        let norm = normalize_header(header);
        Feature::ALL.into_iter().find(|f| {
            f.header_prefixes()
                .iter()
                .any(|prefix| norm.starts_with(prefix))
        })
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn normalize_header(header: &str) -> String {
    header
        .chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

pub fn is_target_header(header: &str) -> bool {
    normalize_header(header) == "rul"
}
