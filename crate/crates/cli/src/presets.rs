//! Configurations reproducing each acceptance criterion, embedded in the binary.

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        /// `(name, JSON text)` for every shipped preset.
        pub const PRESETS: &[(&str, &str)] = &[$(($name, include_str!(concat!("../presets/criterion-", $name, ".json")))),*];
    };
}

presets!["1", "2", "3", "4", "5", "6", "7", "8", "9", "9-gamma", "10", "11", "11-truncated", "12", "13"];

pub fn find(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}
