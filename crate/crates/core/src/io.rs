//! File formats. Reals are written with Rust's shortest round-trip decimal
//! form, so every save/load pair is bit-exact.
//!
//! Signal CSV:
//! ```text
//! # fs=100,label=drowsy
//! 0.0123
//! ...
//! ```
//! Stack CSV: the same first line, one `# channel=..` line per channel, a
//! `c0,c1,..` header and one row per sample. Dataset CSV: `label,v0,v1,..`
//! then rows. Stack and dataset files must end with a newline; one that
//! does not was cut short. Masks: JSON or plain PGM (`P2`).

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::filterbank::{ChannelMeta, FilteredStack};
use crate::signal_gen::PpgSignal;
use crate::tdcnn::{ArchSpec, PatternDataset, TdcnnModel};
use crate::vision::SegMask;
use crate::{Class, Error, Result};

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(file_error(path))
}

/// Writes `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(file_error(dir))?;
    }
    fs::write(path, contents).map_err(file_error(path))
}

fn json_error(e: serde_json::Error) -> Error {
    Error::parse(e.line(), None, e.to_string())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(json_error)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json(&read_text(path)?)
}

fn parse_num<T: FromStr>(token: &str, line: usize, field: &str) -> Result<T> {
    token
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, Some(field), format!("cannot parse `{}`", token.trim())))
}

fn require_complete(text: &str) -> Result<()> {
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::parse(text.lines().count(), None, "truncated: last line has no newline"));
    }
    Ok(())
}

fn label_text(label: Option<Class>) -> &'static str {
    label.map_or("none", Class::as_str)
}

fn parse_label(token: &str, line: usize) -> Result<Option<Class>> {
    match token.trim() {
        "none" | "" => Ok(None),
        t => t
            .parse()
            .map(Some)
            .map_err(|_| Error::parse(line, Some("label"), format!("unknown label `{t}`"))),
    }
}

/// Parses `# k1=v1,k2=v2` into pairs.
fn meta_pairs(line: &str, line_no: usize) -> Result<Vec<(String, String)>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(line_no, None, "expected a `#` metadata line"))?;
    body.split(',')
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, None, format!("expected key=value, got `{}`", kv.trim())))?;
            Ok((k.trim().to_owned(), v.trim().to_owned()))
        })
        .collect()
}

fn meta_get<'a>(pairs: &'a [(String, String)], key: &str, line: usize) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::parse(line, Some(key), "missing"))
}

fn header_line(fs: f64, label: Option<Class>) -> String {
    format!("# fs={fs},label={}\n", label_text(label))
}

fn parse_header(line: Option<&str>) -> Result<(f64, Option<Class>)> {
    let line = line.ok_or_else(|| Error::parse(1, None, "empty file"))?;
    let pairs = meta_pairs(line, 1)?;
    let fs = parse_num(meta_get(&pairs, "fs", 1)?, 1, "fs")?;
    let label = parse_label(meta_get(&pairs, "label", 1)?, 1)?;
    Ok((fs, label))
}

pub fn signal_to_csv(signal: &PpgSignal) -> String {
    let mut out = header_line(signal.fs, signal.label);
    for v in &signal.samples {
        out.push_str(&format!("{v}\n"));
    }
    out
}

pub fn signal_from_csv(text: &str) -> Result<PpgSignal> {
    let mut lines = text.lines();
    let (fs, label) = parse_header(lines.next())?;
    let samples = lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_num(l, i + 2, "sample"))
        .collect::<Result<Vec<f64>>>()?;
    PpgSignal::new(samples, fs, label)
}

pub fn signal_from_json(text: &str) -> Result<PpgSignal> {
    let s: PpgSignal = from_json(text)?;
    s.validate()?;
    Ok(s)
}

/// Loads a signal from `.json` or CSV by extension.
pub fn load_signal(path: &Path) -> Result<PpgSignal> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        signal_from_json(&text)
    } else {
        signal_from_csv(&text)
    }
}

pub fn save_signal(path: &Path, signal: &PpgSignal) -> Result<()> {
    if path.extension().is_some_and(|e| e == "json") {
        save_json(path, signal)
    } else {
        write_text(path, &signal_to_csv(signal))
    }
}

pub fn stack_to_csv(stack: &FilteredStack) -> String {
    let mut out = header_line(stack.fs, stack.label);
    for (i, m) in stack.meta.iter().enumerate() {
        out.push_str(&format!(
            "# channel={i},layer={},band={},f_lo={},f_hi={},taps={}\n",
            m.layer, m.band, m.f_lo, m.f_hi, m.taps
        ));
    }
    let names: Vec<String> = (0..stack.channel_count()).map(|i| format!("c{i}")).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for k in 0..stack.len() {
        let row: Vec<String> = stack.channels.iter().map(|c| c[k].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn stack_from_csv(text: &str) -> Result<FilteredStack> {
    require_complete(text)?;
    let lines: Vec<&str> = text.lines().collect();
    let (fs, label) = parse_header(lines.first().copied())?;
    let mut meta = Vec::new();
    let mut i = 1;
    while i < lines.len() && lines[i].starts_with('#') {
        let line = i + 1;
        let p = meta_pairs(lines[i], line)?;
        let get = |k: &str| meta_get(&p, k, line);
        if parse_num::<usize>(get("channel")?, line, "channel")? != meta.len() {
            return Err(Error::parse(line, Some("channel"), "channels out of order"));
        }
        meta.push(ChannelMeta {
            layer: parse_num(get("layer")?, line, "layer")?,
            band: parse_num(get("band")?, line, "band")?,
            f_lo: parse_num(get("f_lo")?, line, "f_lo")?,
            f_hi: parse_num(get("f_hi")?, line, "f_hi")?,
            taps: parse_num(get("taps")?, line, "taps")?,
        });
        i += 1;
    }
    let header = lines.get(i).ok_or_else(|| Error::parse(i + 1, None, "missing column header"))?;
    let n_ch = header.split(',').count();
    if meta.is_empty() || n_ch != meta.len() {
        return Err(Error::parse(
            i + 1,
            None,
            format!("{} columns but {} channel descriptions", n_ch, meta.len()),
        ));
    }
    let mut channels = vec![Vec::new(); n_ch];
    for (j, l) in lines.iter().enumerate().skip(i + 1) {
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != n_ch {
            return Err(Error::parse(j + 1, None, format!("expected {n_ch} fields, got {}", fields.len())));
        }
        for (c, f) in fields.iter().enumerate() {
            channels[c].push(parse_num(f, j + 1, &format!("c{c}"))?);
        }
    }
    Ok(FilteredStack {
        channels,
        meta,
        fs,
        label,
    })
}

pub fn dataset_to_csv(ds: &PatternDataset) -> String {
    let mut out = String::from("label");
    for i in 0..ds.width() {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for (row, label) in ds.rows.iter().zip(&ds.labels) {
        out.push_str(label.as_str());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn dataset_from_csv(text: &str) -> Result<PatternDataset> {
    require_complete(text)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, None, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first().map(|c| c.trim()) != Some("label") || cols.len() < 2 {
        return Err(Error::parse(1, None, "header must be `label,v0,...`"));
    }
    let mut ds = PatternDataset::default();
    for (i, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::parse(i + 1, None, format!("expected {} fields, got {}", cols.len(), fields.len())));
        }
        let label = parse_label(fields[0], i + 1)?.ok_or_else(|| Error::parse(i + 1, Some("label"), "rows need a label"))?;
        let row = fields[1..]
            .iter()
            .enumerate()
            .map(|(k, f)| parse_num(f, i + 1, cols[k + 1].trim()))
            .collect::<Result<Vec<f64>>>()?;
        ds.push(row, label);
    }
    ds.validate()?;
    Ok(ds)
}

pub const CHECKPOINT_FORMAT: &str = "hyperppg-tdcnn";

/// Checkpoint layout: parameter groups in block order (conv_w, conv_b,
/// gamma, beta, then proj if present), then head.w and head.b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub arch: ArchSpec,
    pub groups: Vec<WeightGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightGroup {
    pub name: String,
    pub values: Vec<String>,
}

pub fn checkpoint(model: &TdcnnModel) -> Checkpoint {
    Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        arch: model.arch.clone(),
        groups: model
            .param_group_names()
            .into_iter()
            .zip(model.param_groups())
            .map(|(name, g)| WeightGroup {
                name,
                values: g.iter().map(f64::to_string).collect(),
            })
            .collect(),
    }
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<TdcnnModel> {
    if ck.format != CHECKPOINT_FORMAT || ck.version != 1 {
        return Err(Error::parse(1, Some("format"), format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
    }
    ck.arch.validate()?;
    let mut model = TdcnnModel::init(&ck.arch, 0)?;
    let names = model.param_group_names();
    if names.len() != ck.groups.len() {
        return Err(Error::parse(1, Some("groups"), format!("expected {} groups, got {}", names.len(), ck.groups.len())));
    }
    for ((dst, name), src) in model.param_groups_mut().into_iter().zip(&names).zip(&ck.groups) {
        if &src.name != name || src.values.len() != dst.len() {
            return Err(Error::parse(
                1,
                Some(&src.name),
                format!("expected group `{name}` with {} values, got {}", dst.len(), src.values.len()),
            ));
        }
        for (d, s) in dst.iter_mut().zip(&src.values) {
            *d = parse_num(s, 1, name)?;
        }
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &TdcnnModel) -> Result<()> {
    save_json(path, &checkpoint(model))
}

pub fn load_model(path: &Path) -> Result<TdcnnModel> {
    model_from_checkpoint(&load_json(path)?)
}

pub fn mask_to_pgm(mask: &SegMask) -> String {
    let max = mask.labels.iter().copied().max().unwrap_or(0).max(1);
    let mut out = format!("P2\n{} {}\n{max}\n", mask.w, mask.h);
    for r in 0..mask.h {
        let row: Vec<String> = mask.labels[r * mask.w..(r + 1) * mask.w].iter().map(u32::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn mask_from_pgm(text: &str) -> Result<SegMask> {
    let mut tokens = text.lines().enumerate().flat_map(|(i, l)| {
        let body = l.split('#').next().unwrap_or("");
        body.split_whitespace().map(move |t| (i + 1, t))
    });
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| Error::parse(text.lines().count().max(1), Some(what), "unexpected end of file"))
    };
    let (line, magic) = next("magic")?;
    if magic != "P2" {
        return Err(Error::parse(line, Some("magic"), format!("expected P2, got `{magic}`")));
    }
    let (line, w) = next("width")?;
    let w: usize = parse_num(w, line, "width")?;
    let (line, h) = next("height")?;
    let h: usize = parse_num(h, line, "height")?;
    let (line, max) = next("maxval")?;
    let max: u32 = parse_num(max, line, "maxval")?;
    let mut labels = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let (line, t) = next("pixel")?;
        let v: u32 = parse_num(t, line, "pixel")?;
        if v > max {
            return Err(Error::parse(line, Some("pixel"), format!("{v} exceeds maxval {max}")));
        }
        labels.push(v);
    }
    SegMask::new(h, w, labels)
}

/// Loads a mask from `.json` or PGM by extension.
pub fn load_mask(path: &Path) -> Result<SegMask> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: SegMask = from_json(&text)?;
        SegMask::new(m.h, m.w, m.labels)
    } else {
        mask_from_pgm(&text)
    }
}

pub fn save_mask(path: &Path, mask: &SegMask) -> Result<()> {
    if path.extension().is_some_and(|e| e == "json") {
        save_json(path, mask)
    } else {
        write_text(path, &mask_to_pgm(mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{hyper_filter, HyperFilterConfig};
    use crate::signal_gen::{synthesize, AnsState, NoiseSpec};
    use crate::tdcnn::Mode;

    fn signal() -> PpgSignal {
        synthesize(&AnsState::drowsy(), &NoiseSpec::road(), 20.0, 100.0, 3).unwrap()
    }

    fn is_parse(e: &Error) -> bool {
        matches!(e, Error::Parse { .. })
    }

    #[test]
    fn signal_round_trips() {
        let s = signal();
        assert_eq!(signal_from_csv(&signal_to_csv(&s)).unwrap(), s);
        assert_eq!(signal_from_json(&to_json(&s).unwrap()).unwrap(), s);
        let unlabeled = PpgSignal::new(vec![0.1, 1e-300, -3.5], 25.0, None).unwrap();
        assert_eq!(signal_from_csv(&signal_to_csv(&unlabeled)).unwrap(), unlabeled);
    }

    #[test]
    fn bad_signal_reports_line() {
        let err = signal_from_csv("# fs=100,label=drowsy\n0.5\nabc\n").unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location.line, 3),
            e => panic!("{e}"),
        }
        assert!(is_parse(&signal_from_csv("").unwrap_err()));
        assert!(is_parse(&signal_from_csv("# label=x\n").unwrap_err()));
        assert!(is_parse(&signal_from_json("{\"samples\":[1.0,").unwrap_err()));
    }

    #[test]
    fn stack_round_trips() {
        let cfg = HyperFilterConfig::default();
        let st = hyper_filter(&signal(), &cfg).unwrap();
        let back = stack_from_csv(&stack_to_csv(&st)).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn truncated_stack_is_a_parse_error() {
        let cfg = HyperFilterConfig::default();
        let text = stack_to_csv(&hyper_filter(&signal(), &cfg).unwrap());
        let cut = &text[..text.len() - 20];
        assert!(is_parse(&stack_from_csv(cut).unwrap_err()));
        let headless: String = text.lines().take(10).collect::<Vec<_>>().join("\n") + "\n";
        assert!(is_parse(&stack_from_csv(&headless).unwrap_err()));
    }

    #[test]
    fn dataset_round_trips() {
        let mut ds = PatternDataset::default();
        ds.push(vec![0.1, -2.0, 3.25e-7], Class::Drowsy);
        ds.push(vec![1.0 / 3.0, 0.0, -0.0], Class::Wakeful);
        let back = dataset_from_csv(&dataset_to_csv(&ds)).unwrap();
        assert_eq!(back, ds);
        assert!(is_parse(&dataset_from_csv("label,v0\ndrowsy,1,2\n").unwrap_err()));
        assert!(is_parse(&dataset_from_csv("label,v0\nsleepy,1\n").unwrap_err()));
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward() {
        let model = TdcnnModel::init(&ArchSpec::default(), 17).unwrap();
        let text = to_json(&checkpoint(&model)).unwrap();
        let back = model_from_checkpoint(&from_json(&text).unwrap()).unwrap();
        assert_eq!(back, model);
        let x: Vec<f64> = (0..33).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(back.forward(&x, Mode::Eval).unwrap(), model.forward(&x, Mode::Eval).unwrap());
    }

    #[test]
    fn damaged_checkpoint_is_rejected() {
        let model = TdcnnModel::init(&ArchSpec::tiny(2, 4), 1).unwrap();
        let mut ck = checkpoint(&model);
        ck.groups[0].values.pop();
        assert!(is_parse(&model_from_checkpoint(&ck).unwrap_err()));
        let mut ck = checkpoint(&model);
        ck.groups[1].values[0] = "x1".into();
        assert!(is_parse(&model_from_checkpoint(&ck).unwrap_err()));
        let text = to_json(&checkpoint(&model)).unwrap();
        assert!(is_parse(&from_json::<Checkpoint>(&text[..text.len() / 2]).unwrap_err()));
    }

    #[test]
    fn mask_round_trips() {
        let m = SegMask::from_fn(3, 4, |r, c| ((r * 4 + c) % 3) as u32);
        assert_eq!(mask_from_pgm(&mask_to_pgm(&m)).unwrap(), m);
        let with_comment = "P2\n# made by hand\n2 1\n1\n0 1\n";
        assert_eq!(mask_from_pgm(with_comment).unwrap().labels, vec![0, 1]);
        assert!(is_parse(&mask_from_pgm("P2\n2 2\n1\n0 1 1\n").unwrap_err()));
        assert!(is_parse(&mask_from_pgm("P5\n1 1\n1\n0\n").unwrap_err()));
    }

    #[test]
    fn save_creates_directories() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/sig.csv");
        let s = signal();
        save_signal(&p, &s).unwrap();
        assert_eq!(load_signal(&p).unwrap(), s);
        let pj = dir.path().join("sig.json");
        save_signal(&pj, &s).unwrap();
        assert_eq!(load_signal(&pj).unwrap(), s);
    }
}
