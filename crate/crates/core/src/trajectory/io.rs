//! Line-delimited trajectory files: an optional header object followed by
//! one JSON record per trajectory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContextVector, DatasetMeta, Step, Trajectory, TrajectoryDataset};
use crate::{Error, Result};

/// Optional first line of a trajectory file. Any field left out is derived
/// from the data (`t_max`, `b_bound`, `item_count`) or stays undeclared.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<BTreeMap<u32, u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floors: Option<BTreeMap<u32, u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_features: Option<BTreeMap<u32, Vec<f64>>>,
}

impl DatasetHeader {
    fn overlay(self, over: &DatasetHeader) -> DatasetHeader {
        DatasetHeader {
            t_max: over.t_max.or(self.t_max),
            b_bound: over.b_bound.or(self.b_bound),
            item_count: over.item_count.or(self.item_count),
            categories: over.categories.clone().or(self.categories),
            floors: over.floors.clone().or(self.floors),
            item_features: over.item_features.clone().or(self.item_features),
        }
    }

    fn from_meta(meta: &DatasetMeta) -> DatasetHeader {
        let as_map = |v: &Option<Vec<u32>>| {
            v.as_ref()
                .map(|v| v.iter().enumerate().map(|(i, &c)| (i as u32, c)).collect())
        };
        DatasetHeader {
            t_max: Some(meta.t_max),
            b_bound: Some(meta.b_bound),
            item_count: Some(meta.item_count),
            categories: as_map(&meta.categories),
            floors: as_map(&meta.floors),
            item_features: meta.item_features.as_ref().map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(i, r)| (i as u32, r.clone()))
                    .collect()
            }),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    context: Vec<f64>,
    steps: Vec<(u32, f64, f64)>,
}

fn dense<T: Clone>(map: BTreeMap<u32, T>, n: usize, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n as u32 {
        match map.get(&i) {
            Some(v) => out.push(v.clone()),
            None => {
                return Err(Error::Validation(format!("item {i} has no {what} entry")));
            }
        }
    }
    if let Some((&k, _)) = map.iter().find(|(&k, _)| k as usize >= n) {
        return Err(Error::Validation(format!(
            "{what} entry for item {k} beyond item_count {n}"
        )));
    }
    Ok(out)
}

/// Reads a dataset from any buffered reader. `schema` fields take precedence
/// over the file's own header.
pub fn read_dataset<R: BufRead>(reader: R, schema: &DatasetHeader) -> Result<TrajectoryDataset> {
    let mut header = DatasetHeader::default();
    let mut trajectories = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let is_record = value.get("steps").is_some();
        if !is_record {
            if lineno != 1 || !trajectories.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "header is only allowed on the first line".into(),
                });
            }
            header = serde_json::from_value(value).map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad header: {e}"),
            })?;
            continue;
        }
        let rec: Record = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let steps = rec
            .steps
            .into_iter()
            .map(|(item, intra, inter)| Step { item, intra, inter })
            .collect();
        trajectories.push(Trajectory {
            id: rec.id,
            steps,
            context: ContextVector(rec.context),
        });
    }
    if trajectories.is_empty() {
        return Err(Error::Validation("no trajectories".into()));
    }
    for t in &trajectories {
        if t.is_empty() {
            return Err(Error::Validation(format!(
                "trajectory '{}' has no steps",
                t.id
            )));
        }
    }

    let header = header.overlay(schema);
    let t_max = header
        .t_max
        .unwrap_or_else(|| trajectories.iter().map(Trajectory::len).max().unwrap_or(1));
    let b_bound = header.b_bound.unwrap_or_else(|| {
        let m = trajectories
            .iter()
            .map(Trajectory::max_step_total)
            .fold(0.0, f64::max);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    });
    let item_count = header.item_count.unwrap_or_else(|| {
        trajectories
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.item as usize + 1))
            .max()
            .unwrap_or(1)
    });
    let meta = DatasetMeta {
        t_max,
        b_bound,
        item_count,
        categories: header
            .categories
            .map(|m| dense(m, item_count, "category"))
            .transpose()?,
        floors: header
            .floors
            .map(|m| dense(m, item_count, "floor"))
            .transpose()?,
        item_features: header
            .item_features
            .map(|m| dense(m, item_count, "item_features"))
            .transpose()?,
    };
    TrajectoryDataset::new(trajectories, meta)
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetHeader) -> Result<TrajectoryDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), schema)
}

/// Writes the header line followed by one record per trajectory.
pub fn write_dataset<W: Write>(dataset: &TrajectoryDataset, writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    let header = DatasetHeader::from_meta(&dataset.meta);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for t in &dataset.trajectories {
        let rec = Record {
            id: t.id.clone(),
            context: t.context.0.clone(),
            steps: t.steps.iter().map(|s| (s.item, s.intra, s.inter)).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<TrajectoryDataset> {
        read_dataset(text.as_bytes(), &DatasetHeader::default())
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(read(""), Err(Error::Validation(m)) if m == "no trajectories"));
    }

    #[test]
    fn single_line_dataset() {
        let d = read(r#"{"id":"a","context":[1.0],"steps":[[0,1.5,0.5],[2,1.0,0.0],[1,0.0,0.0]]}"#)
            .unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.meta.t_max, 3);
        assert_eq!(d.meta.b_bound, 2.0);
        assert_eq!(d.meta.item_count, 3);
    }

    #[test]
    fn negative_intra_names_field() {
        let err = read(r#"{"id":"bad","context":[],"steps":[[0,-1.0,0.5]]}"#).unwrap_err();
        match err {
            Error::Validation(m) => {
                assert!(m.contains("intra"), "{m}");
                assert!(m.contains("bad"), "{m}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"context\":[],\"steps\":[[0,1.0,0.0]]}\n{not json\n";
        assert!(matches!(read(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn header_declares_bounds_and_maps() {
        let text = concat!(
            r#"{"t_max":5,"b_bound":9.0,"item_count":2,"categories":{"0":0,"1":1},"floors":{"0":1,"1":0}}"#,
            "\n",
            r#"{"id":"a","context":[0.5],"steps":[[1,2.0,1.0]]}"#,
            "\n"
        );
        let d = read(text).unwrap();
        assert_eq!(d.meta.t_max, 5);
        assert_eq!(d.meta.b_bound, 9.0);
        assert_eq!(d.meta.categories, Some(vec![0, 1]));
        assert_eq!(d.meta.floors, Some(vec![1, 0]));
    }

    #[test]
    fn header_violation_is_validation_error() {
        let text = concat!(
            r#"{"t_max":1}"#,
            "\n",
            r#"{"id":"long","context":[],"steps":[[0,1.0,0.0],[0,1.0,0.0]]}"#
        );
        assert!(matches!(read(text), Err(Error::Validation(m)) if m.contains("long")));
    }

    #[test]
    fn write_then_read_is_identity() {
        let text = concat!(
            r#"{"t_max":4,"b_bound":9.0,"item_count":3,"categories":{"0":0,"1":1,"2":1}}"#,
            "\n",
            r#"{"id":"a","context":[0.25,1.0],"steps":[[1,2.0,1.0],[2,0.125,3.0]]}"#,
            "\n",
            r#"{"id":"b","context":[0.5,0.0],"steps":[[0,1.0,0.0]]}"#,
            "\n"
        );
        let d = read(text).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let again = read(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(d, again);
    }
}
