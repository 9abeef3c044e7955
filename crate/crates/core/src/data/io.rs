use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{HeldOut, Interaction, InteractionSet, RawInteraction, SplitDataset};
use crate::error::{Error, Result};

/// Share of malformed lines above which loading aborts.
const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    /// `user::item::rating::timestamp`, as in MovieLens `ratings.dat`.
    MovielensDat,
    /// `user,item,rating,timestamp` with an optional header row.
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens-dat" | "dat" => Ok(Format::MovielensDat),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

fn parse_line(line: &str, format: Format) -> std::result::Result<RawInteraction, String> {
    let fields: Vec<&str> = match format {
        Format::MovielensDat => line.split("::").collect(),
        Format::Csv => line.split(',').map(str::trim).collect(),
    };
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let (user, item, rating, ts) = (fields[0], fields[1], fields[2], fields[3]);
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item id".into());
    }
    rating
        .parse::<f64>()
        .map_err(|_| format!("bad rating {rating:?}"))?;
    let timestamp = ts
        .parse::<u64>()
        .map_err(|_| format!("bad timestamp {ts:?}"))?;
    Ok(RawInteraction::new(user, item, timestamp))
}

/// Reads a rating log. Malformed lines are skipped with a warning naming the
/// line; if more than 1% of the data lines are malformed, loading fails.
pub fn load_interactions<R: BufRead>(mut reader: R, format: Format) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    let mut data_lines = 0usize;
    let mut malformed = 0usize;
    let mut seen_first = false;
    loop {
        buf.clear();
        let read = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("<input>", e))?;
        if read == 0 {
            break;
        }
        line_no += 1;
        let text = match std::str::from_utf8(&buf) {
            Ok(t) => t.trim_end_matches(['\n', '\r']),
            Err(_) => {
                data_lines += 1;
                malformed += 1;
                warn!("line {line_no}: not valid UTF-8");
                continue;
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        let first = !seen_first;
        seen_first = true;
        match parse_line(text, format) {
            Ok(r) => {
                data_lines += 1;
                out.push(r);
            }
            // a leading non-numeric row in a CSV is a header
            Err(_) if first && format == Format::Csv => {}
            Err(msg) => {
                data_lines += 1;
                malformed += 1;
                warn!("{}", Error::Parse { line: line_no, message: msg });
            }
        }
    }
    if malformed as f64 > MAX_MALFORMED_FRACTION * data_lines as f64 {
        return Err(Error::TooManyMalformed {
            malformed,
            total: data_lines,
        });
    }
    Ok(out)
}

pub fn load_interactions_from_path(path: &Path, format: Format) -> Result<Vec<RawInteraction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_interactions(BufReader::new(file), format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub const TRAIN_FILE: &str = "train.tsv";
pub const VALIDATION_FILE: &str = "validation.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const ID_MAP_FILE: &str = "id_map.json";

#[derive(Serialize, Deserialize)]
struct IdMap {
    users: Vec<String>,
    items: Vec<String>,
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(body)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `train.tsv`, `validation.tsv`, `test.tsv` (internal
/// `user<TAB>item<TAB>timestamp` rows) and the `id_map.json` sidecar.
pub fn save_split(split: &SplitDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut train = String::new();
    for (u, x) in split.train.iter() {
        train.push_str(&format!("{u}\t{}\t{}\n", x.item, x.timestamp));
    }
    write_file(&dir.join(TRAIN_FILE), train.as_bytes())?;
    for (name, held) in [(VALIDATION_FILE, &split.validation), (TEST_FILE, &split.test)] {
        let mut body = String::new();
        for (u, h) in held.iter().enumerate() {
            body.push_str(&format!("{u}\t{}\t{}\n", h.item, h.timestamp));
        }
        write_file(&dir.join(name), body.as_bytes())?;
    }
    let ids = IdMap {
        users: split.train.user_ids().to_vec(),
        items: split.train.item_ids().to_vec(),
    };
    write_file(&dir.join(ID_MAP_FILE), &serde_json::to_vec_pretty(&ids)?)
}

fn read_triples(path: &Path) -> Result<Vec<(usize, usize, u64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Data(format!("{}:{}: {message}", path.display(), n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(format!("expected 3 columns, found {}", f.len())));
        }
        let u = f[0].parse().map_err(|_| parse_err(format!("bad user {:?}", f[0])))?;
        let i = f[1].parse().map_err(|_| parse_err(format!("bad item {:?}", f[1])))?;
        let t = f[2].parse().map_err(|_| parse_err(format!("bad timestamp {:?}", f[2])))?;
        rows.push((u, i, t));
    }
    Ok(rows)
}

fn read_held_out(path: &Path, num_users: usize, num_items: usize) -> Result<Vec<HeldOut>> {
    let mut held = vec![None; num_users];
    for (u, item, timestamp) in read_triples(path)? {
        if u >= num_users || item >= num_items {
            return Err(Error::Data(format!(
                "{}: id ({u}, {item}) outside {num_users} x {num_items}",
                path.display()
            )));
        }
        held[u] = Some(HeldOut { item, timestamp });
    }
    held.into_iter()
        .enumerate()
        .map(|(u, h)| {
            h.ok_or_else(|| Error::Data(format!("{}: no row for user {u}", path.display())))
        })
        .collect()
}

/// Reads a split written by [`save_split`].
pub fn load_split(dir: &Path) -> Result<SplitDataset> {
    let id_path = dir.join(ID_MAP_FILE);
    let raw = fs::read(&id_path).map_err(|e| Error::io(&id_path, e))?;
    let ids: IdMap = serde_json::from_slice(&raw)?;
    let (m, n) = (ids.users.len(), ids.items.len());

    let mut timelines = vec![Vec::new(); m];
    for (u, item, timestamp) in read_triples(&dir.join(TRAIN_FILE))? {
        if u >= m || item >= n {
            return Err(Error::Data(format!("{TRAIN_FILE}: id ({u}, {item}) outside {m} x {n}")));
        }
        timelines[u].push(Interaction { item, timestamp });
    }
    let train = InteractionSet::from_timelines(ids.users, ids.items, timelines)?;
    let validation = read_held_out(&dir.join(VALIDATION_FILE), m, n)?;
    let test = read_held_out(&dir.join(TEST_FILE), m, n)?;
    SplitDataset::new(train, validation, test)
}
