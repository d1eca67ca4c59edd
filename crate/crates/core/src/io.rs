//! On-disk formats: AVT1 tensors, CCN1 checkpoints and `manifest.txt`.
//!
//! AVT1: `b"AVT1"`, rank as u32 LE, each extent as u32 LE, then f32 LE data.
//! CCN1: `b"CCN1"`, u32 LE length plus UTF-8 config text, then per parameter
//! a u32 LE name length, the name, and an AVT1 tensor, until end of file.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;
use crate::types::{EventAnnotation, FeatureSequence, Video};

pub const TENSOR_MAGIC: &[u8; 4] = b"AVT1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CCN1";
pub const MANIFEST_FILE: &str = "manifest.txt";
const MAX_RANK: usize = 8;

pub fn encode_tensor(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Bounds-checked reader that reports byte offsets.
struct Cursor<'a> {
    what: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(what: &'a str, bytes: &'a [u8]) -> Self {
        Self { what, bytes, pos: 0 }
    }

    fn fail(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::Parse {
            what: self.what.to_string(),
            offset,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(
                self.pos,
                format!(
                    "truncated {field}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(self.fail(
                at,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        self.magic(TENSOR_MAGIC)?;
        let rank_at = self.pos;
        let rank = self.u32("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(self.fail(rank_at, format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count = 1usize;
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u32("extent")? as usize;
            if d == 0 {
                return Err(self.fail(at, "zero extent"));
            }
            count = count
                .checked_mul(d)
                .filter(|&c| c <= (self.bytes.len() - self.pos) / 4 + 1)
                .ok_or_else(|| self.fail(at, "extents exceed the remaining data"))?;
            shape.push(d);
        }
        let raw = self.take(count * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::new(shape, data).map_err(|e| self.fail(rank_at, e.to_string()))
    }
}

/// Parses exactly one AVT1 tensor.
pub fn decode_tensor(what: &str, bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut c = Cursor::new(what, bytes);
    let t = c.tensor()?;
    if !c.at_end() {
        return Err(c.fail(c.pos, "trailing bytes after tensor"));
    }
    Ok(t)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * t.len());
    encode_tensor(t, &mut buf);
    write_bytes(path, &buf)
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    decode_tensor(&path.display().to_string(), &read_bytes(path)?)
}

/// A checkpoint: free-form config text plus named tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub params: ParamStore<f32>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(ck.config.len() as u32).to_le_bytes());
    out.extend_from_slice(ck.config.as_bytes());
    for p in ck.params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        encode_tensor(&p.value, &mut out);
    }
    out
}

pub fn decode_checkpoint(what: &str, bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor::new(what, bytes);
    c.magic(CHECKPOINT_MAGIC)?;
    let len = c.u32("config length")? as usize;
    let at = c.pos;
    let config = std::str::from_utf8(c.take(len, "config text")?)
        .map_err(|e| c.fail(at, format!("config text is not UTF-8: {e}")))?
        .to_string();
    let mut params = ParamStore::new();
    while !c.at_end() {
        let len = c.u32("name length")? as usize;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(len, "parameter name")?)
            .map_err(|e| c.fail(at, format!("parameter name is not UTF-8: {e}")))?
            .to_string();
        if params.id(&name).is_ok() {
            return Err(c.fail(at, format!("duplicate parameter `{name}`")));
        }
        let value = c.tensor()?;
        params.add(name, value);
    }
    Ok(Checkpoint { config, params })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode_checkpoint(ck))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&path.display().to_string(), &read_bytes(path)?)
}

/// One manifest record.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub valid_len: usize,
    pub audio: PathBuf,
    pub visual: PathBuf,
    pub seconds_per_timestep: f64,
    pub events: Vec<EventAnnotation>,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for (i, e) in entries.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("id={}\n", e.id));
        out.push_str(&format!("valid_len={}\n", e.valid_len));
        out.push_str(&format!("audio={}\n", e.audio.display()));
        out.push_str(&format!("visual={}\n", e.visual.display()));
        out.push_str(&format!("seconds_per_timestep={}\n", e.seconds_per_timestep));
        for ev in &e.events {
            out.push_str(&format!("event={} {} {}\n", ev.t_start, ev.t_end, ev.class_id));
        }
    }
    out
}

pub fn parse_manifest(what: &str, text: &str) -> Result<Vec<ManifestEntry>> {
    let fail = |offset: usize, detail: String| Error::Parse {
        what: what.to_string(),
        offset,
        detail,
    };

    #[derive(Default)]
    struct Partial {
        start: usize,
        id: Option<String>,
        valid_len: Option<usize>,
        audio: Option<PathBuf>,
        visual: Option<PathBuf>,
        seconds: Option<f64>,
        events: Vec<EventAnnotation>,
    }

    let finish = |p: Partial| -> Result<ManifestEntry> {
        let missing = |k: &str| fail(p.start, format!("record is missing `{k}`"));
        let entry = ManifestEntry {
            id: p.id.clone().ok_or_else(|| missing("id"))?,
            valid_len: p.valid_len.ok_or_else(|| missing("valid_len"))?,
            audio: p.audio.clone().ok_or_else(|| missing("audio"))?,
            visual: p.visual.clone().ok_or_else(|| missing("visual"))?,
            seconds_per_timestep: p.seconds.unwrap_or(1.0),
            events: p.events,
        };
        for ev in &entry.events {
            if !(ev.t_start >= 0.0 && ev.t_end > ev.t_start && ev.t_end <= entry.valid_len as f64) {
                return Err(fail(
                    p.start,
                    format!(
                        "event [{}, {}) of `{}` lies outside [0, {})",
                        ev.t_start, ev.t_end, entry.id, entry.valid_len
                    ),
                ));
            }
        }
        Ok(entry)
    };

    let mut entries = Vec::new();
    let mut current: Option<Partial> = None;
    let mut offset = 0usize;
    for raw in text.split_inclusive('\n') {
        let line_at = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            if let Some(p) = current.take() {
                entries.push(finish(p)?);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let p = current.get_or_insert_with(|| Partial {
            start: line_at,
            ..Partial::default()
        });
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail(line_at, format!("expected key=value, got `{line}`")))?;
        let bad = |detail: String| fail(line_at, detail);
        match key {
            "id" => p.id = Some(value.to_string()),
            "valid_len" => {
                p.valid_len = Some(value.parse().map_err(|e| bad(format!("valid_len: {e}")))?)
            }
            "audio" => p.audio = Some(PathBuf::from(value)),
            "visual" => p.visual = Some(PathBuf::from(value)),
            "seconds_per_timestep" => {
                let s: f64 = value
                    .parse()
                    .map_err(|e| bad(format!("seconds_per_timestep: {e}")))?;
                if !(s > 0.0 && s.is_finite()) {
                    return Err(bad("seconds_per_timestep must be positive".into()));
                }
                p.seconds = Some(s)
            }
            "event" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [s, e, c] = parts[..] else {
                    return Err(bad(format!("event needs `start end class`, got `{value}`")));
                };
                let num = |x: &str| x.parse::<f64>().map_err(|err| bad(format!("event `{x}`: {err}")));
                let class_id = c.parse().map_err(|err| bad(format!("event class `{c}`: {err}")))?;
                p.events.push(EventAnnotation::new(num(s)?, num(e)?, class_id));
            }
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    if let Some(p) = current.take() {
        entries.push(finish(p)?);
    }
    Ok(entries)
}

pub fn audio_file(id: &str) -> String {
    format!("{id}.a.avt")
}

pub fn visual_file(id: &str) -> String {
    format!("{id}.v.avt")
}

/// Writes `manifest.txt` and the feature files for `videos` into `dir`.
pub fn write_dataset(dir: &Path, videos: &[Video]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        let entry = ManifestEntry {
            id: v.id.clone(),
            valid_len: v.valid_len(),
            audio: PathBuf::from(audio_file(&v.id)),
            visual: PathBuf::from(visual_file(&v.id)),
            seconds_per_timestep: v.seconds_per_timestep,
            events: v.events.clone(),
        };
        write_tensor(&dir.join(&entry.audio), &v.audio.values)?;
        write_tensor(&dir.join(&entry.visual), &v.visual.values)?;
        entries.push(entry);
    }
    let path = dir.join(MANIFEST_FILE);
    write_bytes(&path, format_manifest(&entries).as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = read_bytes(&path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        offset: e.valid_up_to(),
        detail: "manifest is not UTF-8".into(),
    })?;
    parse_manifest(&path.display().to_string(), text)
}

/// Loads every video listed in `dir/manifest.txt`. Relative feature paths
/// resolve against `dir`.
pub fn read_dataset(dir: &Path) -> Result<Vec<Video>> {
    read_manifest(dir)?
        .into_iter()
        .map(|e| {
            let load = |p: &Path| -> Result<FeatureSequence<f32>> {
                let path = if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
                let t = read_tensor(&path)?;
                if t.rank() != 2 {
                    return Err(Error::Parse {
                        what: path.display().to_string(),
                        offset: 4,
                        detail: format!("feature tensor must be rank 2, got shape {:?}", t.shape()),
                    });
                }
                if e.valid_len > t.dims2().0 {
                    return Err(Error::Contract(format!(
                        "`{}` declares valid_len {} but {} has {} rows",
                        e.id,
                        e.valid_len,
                        path.display(),
                        t.dims2().0
                    )));
                }
                Ok(FeatureSequence::new(t, e.valid_len))
            };
            Ok(Video {
                audio: load(&e.audio)?,
                visual: load(&e.visual)?,
                id: e.id,
                events: e.events,
                seconds_per_timestep: e.seconds_per_timestep,
            })
        })
        .collect()
}
