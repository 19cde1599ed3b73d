//! Dataset ingestion and export.
//!
//! CSV schema: header `episode,t,a,r,o_1..o_d`; one row per time point,
//! ordered by `t` within an episode (`t = 0..=T`, contiguous). The final
//! row of an episode carries the terminal observation only — its `a` and
//! `r` cells are written empty and ignored on load.
//!
//! JSON schema: a top-level array of episodes
//! `{"id": …, "obs": [[…]], "actions": […], "rewards": […]}` with actions
//! as integer labels. Floats are 64-bit and printed in shortest
//! round-trip form, so `load → save → load` is byte-stable.
//!
//! Neither format declares the action set; it is derived as the ascending
//! sorted set of distinct labels present in the file.

use super::{DataError, Episode, TrajectoryDataset};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonEpisode {
    id: String,
    obs: Vec<Vec<f64>>,
    actions: Vec<i64>,
    rewards: Vec<f64>,
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Map raw labelled episodes to a dataset with actions as indices into the
/// ascending set of distinct labels.
fn assemble(raw: Vec<(String, Vec<Vec<f64>>, Vec<i64>, Vec<f64>)>) -> Result<TrajectoryDataset, DataError> {
    if raw.is_empty() {
        return Err(DataError::Empty);
    }
    let mut labels: Vec<i64> = raw.iter().flat_map(|(_, _, a, _)| a.iter().copied()).collect();
    labels.sort_unstable();
    labels.dedup();
    let obs_dim = raw[0].1.first().map_or(0, Vec::len);
    let episodes = raw
        .into_iter()
        .map(|(id, observations, actions, rewards)| {
            let actions = actions
                .iter()
                .map(|a| labels.binary_search(a).expect("label was collected above"))
                .collect();
            Episode {
                id,
                observations,
                actions,
                rewards,
            }
        })
        .collect();
    TrajectoryDataset::new(episodes, labels, obs_dim, BTreeMap::new())
}

pub fn load_json(path: &Path) -> Result<TrajectoryDataset, DataError> {
    let text = read_to_string(path)?;
    let parsed: Vec<JsonEpisode> = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        location: path.display().to_string(),
        details: e.to_string(),
    })?;
    assemble(
        parsed
            .into_iter()
            .map(|e| (e.id, e.obs, e.actions, e.rewards))
            .collect(),
    )
}

pub fn save_json(ds: &TrajectoryDataset, path: &Path) -> Result<(), DataError> {
    let episodes: Vec<JsonEpisode> = ds
        .episodes
        .iter()
        .map(|ep| JsonEpisode {
            id: ep.id.clone(),
            obs: ep.observations.clone(),
            actions: ep.actions.iter().map(|a| ds.action_set[*a]).collect(),
            rewards: ep.rewards.clone(),
        })
        .collect();
    let text = serde_json::to_string_pretty(&episodes).expect("episodes serialize");
    std::fs::write(path, text).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_csv(path: &Path) -> Result<TrajectoryDataset, DataError> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| DataError::Parse {
            location: format!("{} header", path.display()),
            details: e.to_string(),
        })?
        .clone();
    let expect_fixed = ["episode", "t", "a", "r"];
    for (i, name) in expect_fixed.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(DataError::Parse {
                location: format!("{} header", path.display()),
                details: format!("expected column {} to be '{}', got '{}'", i, name, headers.get(i).unwrap_or("<missing>")),
            });
        }
    }
    let obs_dim = headers.len() - 4;
    for (i, name) in headers.iter().skip(4).enumerate() {
        let expected = format!("o_{}", i + 1);
        if name != expected {
            return Err(DataError::Parse {
                location: format!("{} header", path.display()),
                details: format!("expected observation column '{}', got '{}'", expected, name),
            });
        }
    }
    if obs_dim == 0 {
        return Err(DataError::Parse {
            location: format!("{} header", path.display()),
            details: "no observation columns o_1..o_d".into(),
        });
    }

    // Rows grouped by episode id in first-appearance order.
    struct RawRow {
        t: usize,
        action: Option<i64>,
        reward: Option<f64>,
        obs: Vec<f64>,
        row_no: usize,
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_episode: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();

    for (idx, record) in reader.records().enumerate() {
        let row_no = idx + 2; // 1-based, after header
        let record = record.map_err(|e| DataError::Parse {
            location: format!("{} row {}", path.display(), row_no),
            details: e.to_string(),
        })?;
        let parse_err = |field: &str, details: String| DataError::Parse {
            location: format!("{} row {} field '{}'", path.display(), row_no, field),
            details,
        };
        let episode = record.get(0).unwrap_or("").to_string();
        if episode.is_empty() {
            return Err(parse_err("episode", "empty episode id".into()));
        }
        let t: usize = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|e| parse_err("t", format!("{}", e)))?;
        let a_raw = record.get(2).unwrap_or("");
        let action = if a_raw.is_empty() {
            None
        } else {
            Some(a_raw.parse::<i64>().map_err(|e| parse_err("a", format!("{}", e)))?)
        };
        let r_raw = record.get(3).unwrap_or("");
        let reward = if r_raw.is_empty() {
            None
        } else {
            Some(r_raw.parse::<f64>().map_err(|e| parse_err("r", format!("{}", e)))?)
        };
        let mut obs = Vec::with_capacity(obs_dim);
        for j in 0..obs_dim {
            let cell = record.get(4 + j).unwrap_or("");
            obs.push(
                cell.parse::<f64>()
                    .map_err(|e| parse_err(&format!("o_{}", j + 1), format!("{}", e)))?,
            );
        }
        if !by_episode.contains_key(&episode) {
            order.push(episode.clone());
        }
        by_episode.entry(episode).or_default().push(RawRow {
            t,
            action,
            reward,
            obs,
            row_no,
        });
    }

    let mut raw = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = by_episode.remove(&id).expect("episode collected above");
        rows.sort_by_key(|r| r.t);
        for (expected_t, row) in rows.iter().enumerate() {
            if row.t != expected_t {
                return Err(DataError::Parse {
                    location: format!("{} row {}", path.display(), row.row_no),
                    details: format!(
                        "episode '{}': non-contiguous time index {} (expected {})",
                        id, row.t, expected_t
                    ),
                });
            }
        }
        if rows.len() < 2 {
            return Err(DataError::Parse {
                location: format!("{} episode '{}'", path.display(), id),
                details: "episode needs at least two rows (one transition)".into(),
            });
        }
        let t_final = rows.len() - 1;
        let mut observations = Vec::with_capacity(rows.len());
        let mut actions = Vec::with_capacity(t_final);
        let mut rewards = Vec::with_capacity(t_final);
        for row in &rows {
            observations.push(row.obs.clone());
            if row.t < t_final {
                let a = row.action.ok_or_else(|| DataError::Parse {
                    location: format!("{} row {}", path.display(), row.row_no),
                    details: format!("episode '{}': missing action at t={}", id, row.t),
                })?;
                let r = row.reward.ok_or_else(|| DataError::Parse {
                    location: format!("{} row {}", path.display(), row.row_no),
                    details: format!("episode '{}': missing reward at t={}", id, row.t),
                })?;
                actions.push(a);
                rewards.push(r);
            }
        }
        raw.push((id, observations, actions, rewards));
    }
    assemble(raw)
}

pub fn save_csv(ds: &TrajectoryDataset, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str("episode,t,a,r");
    for j in 1..=ds.obs_dim {
        out.push_str(&format!(",o_{}", j));
    }
    out.push('\n');
    for ep in &ds.episodes {
        for (t, obs) in ep.observations.iter().enumerate() {
            if t < ep.transitions() {
                out.push_str(&format!(
                    "{},{},{},{}",
                    ep.id,
                    t,
                    ds.action_set[ep.actions[t]],
                    ep.rewards[t]
                ));
            } else {
                out.push_str(&format!("{},{},,", ep.id, t));
            }
            for v in obs {
                out.push_str(&format!(",{}", v));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a dataset in the requested format.
pub fn load_dataset(path: &Path, format: Format) -> Result<TrajectoryDataset, DataError> {
    match format {
        Format::Csv => load_csv(path),
        Format::Json => load_json(path),
    }
}

/// Save a dataset in the requested format.
pub fn save_dataset(ds: &TrajectoryDataset, path: &Path, format: Format) -> Result<(), DataError> {
    match format {
        Format::Csv => save_csv(ds, path),
        Format::Json => save_json(ds, path),
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn write_temp(content: &str, ext: &str) -> tempfile::TempPath {
        use std::io::Write;
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.into_temp_path()
    }

    #[test]
    fn csv_single_episode_three_rows() {
        let p = write_temp(
            "episode,t,a,r,o_1\n0,0,1,0.5,1.25\n0,1,0,-0.5,2.5\n0,2,,,3.75\n",
            ".csv",
        );
        let ds = load_csv(p.as_ref()).unwrap();
        assert_eq!(ds.episodes.len(), 1);
        let ep = &ds.episodes[0];
        assert_eq!(ep.transitions(), 2);
        assert_eq!(ep.observations.len(), 3);
        assert_eq!(ds.action_set, vec![0, 1]);
        assert_eq!(ep.actions, vec![1, 0]); // labels 1, 0 -> indices 1, 0
    }

    #[test]
    fn csv_missing_action_column_is_parse_error() {
        let p = write_temp("episode,t,r,o_1\n0,0,0.5,1.0\n", ".csv");
        let err = load_csv(p.as_ref()).unwrap_err();
        assert!(matches!(err, DataError::Parse { .. }), "{err}");
    }

    #[test]
    fn csv_missing_action_value_names_row() {
        let p = write_temp(
            "episode,t,a,r,o_1\n0,0,1,0.5,1.0\n0,1,,0.5,2.0\n0,2,,,3.0\n",
            ".csv",
        );
        let err = load_csv(p.as_ref()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3") && msg.contains("action"), "{msg}");
    }

    #[test]
    fn csv_non_contiguous_time_named() {
        let p = write_temp(
            "episode,t,a,r,o_1\n0,0,1,0.5,1.0\n0,2,,,3.0\n",
            ".csv",
        );
        let err = load_csv(p.as_ref()).unwrap_err();
        assert!(err.to_string().contains("non-contiguous"), "{err}");
    }

    #[test]
    fn csv_two_episodes_dims_and_count() {
        let p = write_temp(
            concat!(
                "episode,t,a,r,o_1,o_2,o_3\n",
                "a,0,0,1.0,1,2,3\n",
                "a,1,,,4,5,6\n",
                "b,0,1,2.0,7,8,9\n",
                "b,1,1,3.0,1,1,1\n",
                "b,2,,,2,2,2\n"
            ),
            ".csv",
        );
        let ds = load_csv(p.as_ref()).unwrap();
        assert_eq!(ds.obs_dim, 3);
        assert_eq!(ds.total_transitions(), 3);
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let ds = TrajectoryDataset::new(
            vec![Episode {
                id: "ep0".into(),
                observations: vec![vec![0.1, -3.7e-11], vec![2.0 / 3.0, 1e300]],
                actions: vec![0],
                rewards: vec![-0.125],
            }],
            vec![4],
            2,
            BTreeMap::new(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save_json(&ds, &p1).unwrap();
        let loaded = load_json(&p1).unwrap();
        save_json(&loaded, &p2).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "json round trip must be byte-identical"
        );
        assert_eq!(loaded.episodes, ds.episodes);
        assert_eq!(loaded.action_set, ds.action_set);
    }

    #[test]
    fn csv_round_trip_preserves_dataset() {
        let ds = TrajectoryDataset::new(
            vec![Episode {
                id: "0".into(),
                observations: vec![vec![0.1], vec![1.0 / 3.0], vec![-7.25]],
                actions: vec![1, 0],
                rewards: vec![0.5, -1.5],
            }],
            vec![0, 1],
            1,
            BTreeMap::new(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_csv(&ds, &p).unwrap();
        let loaded = load_csv(&p).unwrap();
        assert_eq!(loaded.episodes, ds.episodes);
        assert_eq!(loaded.action_set, ds.action_set);
    }
}
