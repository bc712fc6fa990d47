//! Offline datasets and their newline-delimited JSON form.

use std::io::{self, BufRead, Write};

use serde::ser::Serialize;
use serde::{Deserialize, Serialize as SerializeDerive};
use serde_json::ser::{Formatter, Serializer};

use crate::error::{Error, Result};

/// What the principal sees. There is deliberately no field for the agent's
/// type or action.
#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableTrajectory {
    /// `s_1, ..., s_{H+1}`.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub action_indices: Vec<usize>,
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl ObservableTrajectory {
    pub fn horizon(&self) -> usize {
        self.rewards.len()
    }

    fn validate(&self) -> Result<()> {
        let h = self.rewards.len();
        if self.actions.len() != h
            || self.action_indices.len() != h
            || self.observations.len() != h
            || self.states.len() != h + 1
        {
            return Err(Error::Dimension("trajectory arrays disagree on the horizon".into()));
        }
        Ok(())
    }
}

/// Diagnostic record of private types and agent actions.
#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenTrajectory {
    pub types: Vec<Vec<f64>>,
    pub agent_actions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub horizon: usize,
    pub behavior_policy_tag: String,
    pub seed: u64,
    pub observed: Vec<ObservableTrajectory>,
    pub hidden: Vec<HiddenTrajectory>,
}

#[derive(SerializeDerive, Deserialize)]
struct Line {
    index: usize,
    seed: u64,
    behavior: String,
    obs: ObservableTrajectory,
    hidden: HiddenTrajectory,
}

/// Writes every float with 17 significant digits.
struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value == 0.0 {
            // keeps -0.0 and 0.0 distinct and readable
            return writer.write_all(if value.is_sign_negative() { b"-0.0" } else { b"0.0" });
        }
        write!(writer, "{value:.16e}")
    }
}

pub(crate) fn to_json_line<T: Serialize, W: Write>(value: &T, w: &mut W) -> Result<()> {
    let mut ser = Serializer::with_formatter(&mut *w, FullPrecision);
    value.serialize(&mut ser)?;
    Ok(())
}

impl OfflineDataset {
    pub fn k(&self) -> usize {
        self.observed.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.observed.len() != self.hidden.len() {
            return Err(Error::Dimension(
                "observable and hidden sections differ in length".into(),
            ));
        }
        for (t, hid) in self.observed.iter().zip(&self.hidden) {
            t.validate()?;
            if t.horizon() != self.horizon || hid.types.len() != self.horizon || hid.agent_actions.len() != self.horizon
            {
                return Err(Error::Dimension(format!(
                    "trajectory horizon differs from dataset horizon {}",
                    self.horizon
                )));
            }
        }
        Ok(())
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for (index, (obs, hidden)) in self.observed.iter().zip(&self.hidden).enumerate() {
            let line = Line {
                index,
                seed: self.seed,
                behavior: self.behavior_policy_tag.clone(),
                obs: obs.clone(),
                hidden: hidden.clone(),
            };
            to_json_line(&line, &mut w)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_ndjson_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut observed = Vec::new();
        let mut hidden = Vec::new();
        let mut meta: Option<(u64, String)> = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(&line)?;
            if rec.index != observed.len() {
                return Err(Error::Config(format!(
                    "dataset line {n} has index {} (expected {})",
                    rec.index,
                    observed.len()
                )));
            }
            match &meta {
                None => meta = Some((rec.seed, rec.behavior.clone())),
                Some((s, b)) if *s != rec.seed || *b != rec.behavior => {
                    return Err(Error::Config(format!("dataset line {n} disagrees on seed or behavior")));
                }
                _ => {}
            }
            observed.push(rec.obs);
            hidden.push(rec.hidden);
        }
        let (seed, behavior_policy_tag) = meta.ok_or_else(|| Error::Config("dataset file is empty".into()))?;
        let ds = Self {
            horizon: observed[0].horizon(),
            behavior_policy_tag,
            seed,
            observed,
            hidden,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> OfflineDataset {
        OfflineDataset {
            horizon: 1,
            behavior_policy_tag: "uniform".into(),
            seed: 3,
            observed: vec![ObservableTrajectory {
                states: vec![vec![0.1], vec![-0.0]],
                actions: vec![vec![1.0 / 3.0]],
                action_indices: vec![0],
                observations: vec![vec![1e-300]],
                rewards: vec![-2.5e17],
            }],
            hidden: vec![HiddenTrajectory {
                types: vec![vec![std::f64::consts::PI]],
                agent_actions: vec![vec![0.0]],
            }],
        }
    }

    #[test]
    fn ndjson_roundtrip_is_exact() {
        let ds = tiny();
        let text = ds.to_ndjson_string().unwrap();
        assert!(text.contains("3.3333333333333331e-1"));
        let back = OfflineDataset::read_ndjson(text.as_bytes()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.observed[0].states[1][0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn observable_section_rejects_hidden_fields() {
        let leaked = r#"{"states":[[0.0],[0.0]],"actions":[[1.0]],"action_indices":[0],"observations":[[1.0]],"rewards":[1.0],"types":[[1.0]]}"#;
        assert!(serde_json::from_str::<ObservableTrajectory>(leaked).is_err());
    }
}
