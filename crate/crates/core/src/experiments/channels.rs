use serde::{Deserialize, Serialize};

use crate::datamodel::Recording;
use crate::error::{Error, Result};

pub const FULL: &str = "FULL";
pub const RANDOM: &str = "Random";

/// A named subset of recording channels: one electrode or the full array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub name: String,
    pub channels: Vec<usize>,
}

impl ChannelSet {
    pub fn full(rec: &Recording) -> ChannelSet {
        let mut channels: Vec<usize> = rec.electrode_groups.values().flatten().copied().collect();
        channels.sort_unstable();
        ChannelSet {
            name: FULL.into(),
            channels,
        }
    }

    /// Resolve an electrode name (or `FULL`) against the recording's groups.
    pub fn resolve(rec: &Recording, name: &str) -> Result<ChannelSet> {
        if name == FULL {
            return Ok(ChannelSet::full(rec));
        }
        let Some(ch) = rec.electrode_groups.get(name) else {
            let known: Vec<&str> = rec.electrode_groups.keys().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "unknown channel set {name:?}; electrodes are {known:?} or FULL"
            )));
        };
        if ch.is_empty() {
            return Err(Error::Config(format!("channel set {name} is empty")));
        }
        Ok(ChannelSet {
            name: name.into(),
            channels: ch.clone(),
        })
    }

    pub fn resolve_all(rec: &Recording, names: &[String]) -> Result<Vec<ChannelSet>> {
        if names.is_empty() {
            return Err(Error::Config("no channel sets requested".into()));
        }
        names.iter().map(|n| ChannelSet::resolve(rec, n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{gen_recording, SynthConfig};

    #[test]
    fn full_is_the_union_of_groups() {
        let cfg = SynthConfig {
            n_sessions: 1,
            n_blocks: 1,
            seeg_rate: 500.0,
            audio_rate: 8000.0,
            ..SynthConfig::new(0)
        };
        let rec = gen_recording(&cfg).unwrap();
        let full = ChannelSet::resolve(&rec, FULL).unwrap();
        assert_eq!(full.channels, (0..24).collect::<Vec<_>>());
        assert_eq!(
            ChannelSet::resolve(&rec, "SMC").unwrap().channels,
            (0..8).collect::<Vec<_>>()
        );
        assert!(ChannelSet::resolve(&rec, "Z").is_err());
        assert!(ChannelSet::resolve_all(&rec, &[]).is_err());
    }
}
