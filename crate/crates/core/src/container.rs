// SPDX-License-Identifier: Apache-2.0

//! On-disk model container and input bundle.
//!
//! A model is a text manifest plus one raw blob per weight tensor. Blobs
//! hold 8-bit two's-complement values in row-major order: `[oc][ic][kh][kw]`
//! for convolutions and `[classes][features]` for the classifier.
//!
//! ```text
//! snnsim-model 1
//! quant frac_bits=4
//! input 3 16 16
//! layer conv in=3 out=8 kernel=3 stride=1 padding=1 weights=layer00.bin
//! layer lif decay_shift=1 threshold=16 reset=hard
//! layer residual from=1
//! layer qkformer channels=8 residual=true axis=token q_weights=layer05_q.bin q_decay_shift=1 q_threshold=8 q_reset=hard k_weights=layer05_k.bin k_decay_shift=1 k_threshold=16 k_reset=hard
//! layer avgpool window=2
//! layer w2ttfs window=2
//! layer fc features=64 classes=10 weights=layer11.bin
//! ```
//!
//! `save_model` writes this canonical form, so a saved container reloads to
//! the same graph and re-saves to the same bytes.
//!
//! An input bundle is a header line `snnsim-input 1 <count> <C> <H> <W> <labels>`
//! followed, per image, by an optional little-endian `u16` label and a
//! `⌈C·H·W/8⌉`-byte LSB-first spike bitmap.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::CoreError;
use crate::fixed::{FixedPointFormat, FixedTensor};
use crate::graph::{ConvSpec, FcSpec, LayerSpec, ModelGraph};
use crate::lif::{LifParams, ResetMode};
use crate::qkformer::{MaskAxis, QkBlockSpec};
use crate::spike::{Shape3, SpikeTensor};

pub const MODEL_MAGIC: &str = "snnsim-model";
pub const INPUT_MAGIC: &str = "snnsim-input";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "model.manifest";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line 1: bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: String, expected: &'static str },
    #[error("line 1: unsupported format version {found}")]
    Version { found: String },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown layer kind {kind:?}")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line} (layer {layer}): blob {file} is truncated: {found} of {expected} bytes")]
    TruncatedBlob {
        line: usize,
        layer: usize,
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line} (layer {layer}): shape mismatch: {reason}")]
    ShapeMismatch { line: usize, layer: usize, reason: String },
    #[error("line {line} (layer {layer}): {reason}")]
    Invalid { line: usize, layer: usize, reason: String },
    #[error("input bundle: {0}")]
    Input(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ContainerError + '_ {
    move |source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn reset_name(r: ResetMode) -> &'static str {
    match r {
        ResetMode::HardZero => "hard",
        ResetMode::Subtract => "subtract",
    }
}

fn axis_name(a: MaskAxis) -> &'static str {
    match a {
        MaskAxis::Token => "token",
        MaskAxis::Channel => "channel",
    }
}

fn lif_fields(out: &mut String, prefix: &str, p: &LifParams) {
    let _ = write!(
        out,
        " {prefix}decay_shift={} {prefix}threshold={} {prefix}reset={}",
        p.decay_shift(),
        p.threshold(),
        reset_name(p.reset())
    );
}

fn blob_bytes(t: &FixedTensor) -> Vec<u8> {
    t.values().iter().map(|&v| v as u8).collect()
}

/// Canonical manifest text and `(file name, bytes)` for every blob.
pub fn render_model(model: &ModelGraph) -> (String, Vec<(String, Vec<u8>)>) {
    let mut m = String::new();
    let mut blobs = Vec::new();
    let s = model.input_shape();
    let _ = writeln!(m, "{MODEL_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(m, "quant frac_bits={}", model.format().frac_bits());
    let _ = writeln!(m, "input {} {} {}", s.channels, s.height, s.width);
    for (i, layer) in model.layers().iter().enumerate() {
        match layer {
            LayerSpec::Conv(c) => {
                let name = format!("layer{i:02}.bin");
                let _ = writeln!(
                    m,
                    "layer conv in={} out={} kernel={} stride={} padding={} weights={name}",
                    c.in_channels, c.out_channels, c.kernel, c.stride, c.padding
                );
                blobs.push((name, blob_bytes(&c.weights)));
            }
            LayerSpec::Lif(p) => {
                let mut line = "layer lif".to_string();
                lif_fields(&mut line, "", p);
                m.push_str(&line);
                m.push('\n');
            }
            LayerSpec::ResidualAdd { from } => {
                let _ = writeln!(m, "layer residual from={from}");
            }
            LayerSpec::AvgPool { window } => {
                let _ = writeln!(m, "layer avgpool window={window}");
            }
            LayerSpec::W2ttfsPool { window } => {
                let _ = writeln!(m, "layer w2ttfs window={window}");
            }
            LayerSpec::QkformerBlock(qk) => {
                let (qn, kn) = (format!("layer{i:02}_q.bin"), format!("layer{i:02}_k.bin"));
                let mut line = format!(
                    "layer qkformer channels={} residual={} axis={} q_weights={qn}",
                    qk.channels,
                    qk.residual,
                    axis_name(qk.axis)
                );
                lif_fields(&mut line, "q_", &qk.q_lif);
                let _ = write!(line, " k_weights={kn}");
                lif_fields(&mut line, "k_", &qk.k_lif);
                m.push_str(&line);
                m.push('\n');
                blobs.push((qn, blob_bytes(&qk.q.weights)));
                blobs.push((kn, blob_bytes(&qk.k.weights)));
            }
            LayerSpec::FullyConnected(fc) => {
                let name = format!("layer{i:02}.bin");
                let _ = writeln!(
                    m,
                    "layer fc features={} classes={} weights={name}",
                    fc.in_features, fc.classes
                );
                blobs.push((name, blob_bytes(&fc.weights)));
            }
        }
    }
    (m, blobs)
}

/// Write `dir/model.manifest` and its blobs; returns the manifest path.
pub fn save_model(model: &ModelGraph, dir: &Path) -> Result<PathBuf, ContainerError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (manifest, blobs) = render_model(model);
    for (name, bytes) in blobs {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    let p = dir.join(MANIFEST_NAME);
    fs::write(&p, manifest).map_err(io_err(&p))?;
    Ok(p)
}

/// Load from a manifest file, or from a directory holding `model.manifest`.
pub fn load_model(path: &Path) -> Result<ModelGraph, ContainerError> {
    let manifest = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_model(&text, |name| {
        let p = dir.join(name);
        fs::read(&p).map_err(io_err(&p))
    })
}

struct Fields<'a> {
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, tokens: &[&'a str]) -> Result<Self, ContainerError> {
        let mut map = BTreeMap::new();
        for t in tokens {
            let (k, v) = t.split_once('=').ok_or_else(|| ContainerError::Syntax {
                line,
                reason: format!("expected key=value, got {t:?}"),
            })?;
            if map.insert(k, v).is_some() {
                return Err(ContainerError::Syntax {
                    line,
                    reason: format!("duplicate key {k:?}"),
                });
            }
        }
        Ok(Self { line, map })
    }

    fn raw(&mut self, key: &str) -> Result<&'a str, ContainerError> {
        self.map.remove(key).ok_or_else(|| ContainerError::Syntax {
            line: self.line,
            reason: format!("missing key {key:?}"),
        })
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ContainerError> {
        let line = self.line;
        let v = self.raw(key)?;
        v.parse().map_err(|_| ContainerError::Syntax {
            line,
            reason: format!("bad value {v:?} for {key:?}"),
        })
    }

    fn finish(self) -> Result<(), ContainerError> {
        match self.map.keys().next() {
            Some(k) => Err(ContainerError::Syntax {
                line: self.line,
                reason: format!("unknown key {k:?}"),
            }),
            None => Ok(()),
        }
    }
}

fn parse_reset(line: usize, v: &str) -> Result<ResetMode, ContainerError> {
    match v {
        "hard" => Ok(ResetMode::HardZero),
        "subtract" => Ok(ResetMode::Subtract),
        _ => Err(ContainerError::Syntax {
            line,
            reason: format!("reset must be hard or subtract, got {v:?}"),
        }),
    }
}

fn parse_lif(f: &mut Fields, prefix: &str, layer: usize) -> Result<LifParams, ContainerError> {
    let shift: u8 = f.get(&format!("{prefix}decay_shift"))?;
    let threshold: i64 = f.get(&format!("{prefix}threshold"))?;
    let reset = parse_reset(f.line, f.raw(&format!("{prefix}reset"))?)?;
    LifParams::with_shift(shift, threshold, reset).map_err(|e| ContainerError::Invalid {
        line: f.line,
        layer,
        reason: e.to_string(),
    })
}

struct BlobCtx<'f> {
    line: usize,
    layer: usize,
    format: FixedPointFormat,
    read: &'f mut dyn FnMut(&str) -> Result<Vec<u8>, ContainerError>,
}

impl BlobCtx<'_> {
    fn tensor(&mut self, file: &str, shape: Vec<usize>) -> Result<FixedTensor, ContainerError> {
        let bytes = (self.read)(file)?;
        let expected: usize = shape.iter().product();
        if bytes.len() < expected {
            return Err(ContainerError::TruncatedBlob {
                line: self.line,
                layer: self.layer,
                file: file.to_string(),
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(ContainerError::ShapeMismatch {
                line: self.line,
                layer: self.layer,
                reason: format!("blob {file} has {} bytes, declared shape {shape:?} needs {expected}", bytes.len()),
            });
        }
        let values = bytes.into_iter().map(|b| b as i8).collect();
        FixedTensor::new(shape, self.format, values).map_err(|e| self.invalid(e))
    }

    fn invalid(&self, e: CoreError) -> ContainerError {
        ContainerError::Invalid {
            line: self.line,
            layer: self.layer,
            reason: e.to_string(),
        }
    }
}

/// Parse manifest text, fetching blobs through `read`.
pub fn parse_model<F>(text: &str, mut read: F) -> Result<ModelGraph, ContainerError>
where
    F: FnMut(&str) -> Result<Vec<u8>, ContainerError>,
{
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, first) = lines.next().unwrap_or((1, ""));
    let mut head = first.split_whitespace();
    let magic = head.next().unwrap_or("");
    if magic != MODEL_MAGIC {
        return Err(ContainerError::BadMagic {
            found: magic.to_string(),
            expected: MODEL_MAGIC,
        });
    }
    let version = head.next().unwrap_or("");
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) || head.next().is_some() {
        return Err(ContainerError::Version {
            found: version.to_string(),
        });
    }

    let mut format: Option<FixedPointFormat> = None;
    let mut input: Option<Shape3> = None;
    let mut layers = Vec::new();
    let mut layer_lines = Vec::new();
    for (line, text) in lines {
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let syntax = |reason: String| ContainerError::Syntax { line, reason };
        match tokens[0] {
            "quant" => {
                let mut f = Fields::parse(line, &tokens[1..])?;
                let bits: u8 = f.get("frac_bits")?;
                f.finish()?;
                format = Some(FixedPointFormat::new(bits).map_err(|e| syntax(e.to_string()))?);
            }
            "input" => {
                let dims: Vec<usize> = tokens[1..]
                    .iter()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| syntax(format!("bad input dims {:?}", &tokens[1..])))?;
                let &[c, h, w] = dims.as_slice() else {
                    return Err(syntax("input needs C H W".into()));
                };
                input = Some(Shape3::new(c, h, w));
            }
            "layer" => {
                let fmt = format.ok_or_else(|| syntax("layer before quant line".into()))?;
                let Some(&kind) = tokens.get(1) else {
                    return Err(syntax("layer without a kind".into()));
                };
                let idx = layers.len();
                let mut f = Fields::parse(line, &tokens[2..])?;
                let mut blob = BlobCtx {
                    line,
                    layer: idx,
                    format: fmt,
                    read: &mut read,
                };
                let spec = match kind {
                    "conv" => {
                        let (ic, oc, k): (usize, usize, usize) = (f.get("in")?, f.get("out")?, f.get("kernel")?);
                        let (stride, padding) = (f.get("stride")?, f.get("padding")?);
                        let w = blob.tensor(f.raw("weights")?, vec![oc, ic, k, k])?;
                        LayerSpec::Conv(ConvSpec::new(ic, oc, k, stride, padding, w).map_err(|e| blob.invalid(e))?)
                    }
                    "lif" => LayerSpec::Lif(parse_lif(&mut f, "", idx)?),
                    "residual" => LayerSpec::ResidualAdd { from: f.get("from")? },
                    "avgpool" => LayerSpec::AvgPool { window: f.get("window")? },
                    "w2ttfs" => LayerSpec::W2ttfsPool { window: f.get("window")? },
                    "qkformer" => {
                        let c: usize = f.get("channels")?;
                        let residual: bool = f.get("residual")?;
                        let axis = match f.raw("axis")? {
                            "token" => MaskAxis::Token,
                            "channel" => MaskAxis::Channel,
                            v => return Err(syntax(format!("axis must be token or channel, got {v:?}"))),
                        };
                        let qw = blob.tensor(f.raw("q_weights")?, vec![c, c, 1, 1])?;
                        let kw = blob.tensor(f.raw("k_weights")?, vec![c, c, 1, 1])?;
                        LayerSpec::QkformerBlock(QkBlockSpec {
                            channels: c,
                            q: ConvSpec::new(c, c, 1, 1, 0, qw).map_err(|e| blob.invalid(e))?,
                            q_lif: parse_lif(&mut f, "q_", idx)?,
                            k: ConvSpec::new(c, c, 1, 1, 0, kw).map_err(|e| blob.invalid(e))?,
                            k_lif: parse_lif(&mut f, "k_", idx)?,
                            residual,
                            axis,
                        })
                    }
                    "fc" => {
                        let (features, classes): (usize, usize) = (f.get("features")?, f.get("classes")?);
                        let w = blob.tensor(f.raw("weights")?, vec![classes, features])?;
                        LayerSpec::FullyConnected(FcSpec::new(features, classes, w).map_err(|e| blob.invalid(e))?)
                    }
                    other => {
                        return Err(ContainerError::UnknownKind {
                            line,
                            kind: other.to_string(),
                        })
                    }
                };
                f.finish()?;
                layers.push(spec);
                layer_lines.push(line);
            }
            other => return Err(syntax(format!("unknown directive {other:?}"))),
        }
    }
    let format = format.ok_or_else(|| ContainerError::Syntax {
        line: 1,
        reason: "missing quant line".into(),
    })?;
    let input = input.ok_or_else(|| ContainerError::Syntax {
        line: 1,
        reason: "missing input line".into(),
    })?;
    ModelGraph::new(input, format, layers).map_err(|e| match e {
        CoreError::Graph { layer, reason } => ContainerError::ShapeMismatch {
            line: layer_lines.get(layer).copied().unwrap_or(1),
            layer,
            reason,
        },
        other => ContainerError::Syntax {
            line: 1,
            reason: other.to_string(),
        },
    })
}

/// Spike images of one shape, optionally labelled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputBundle {
    pub shape: Shape3,
    pub images: Vec<SpikeTensor>,
    pub labels: Option<Vec<u16>>,
}

impl InputBundle {
    pub fn new(shape: Shape3, images: Vec<SpikeTensor>, labels: Option<Vec<u16>>) -> Result<Self, ContainerError> {
        if images.iter().any(|i| i.shape() != shape) {
            return Err(ContainerError::Input(format!("every image must be {shape}")));
        }
        if labels.as_ref().is_some_and(|l| l.len() != images.len()) {
            return Err(ContainerError::Input("label count differs from image count".into()));
        }
        Ok(Self { shape, images, labels })
    }

    pub fn image_bytes(shape: Shape3) -> usize {
        shape.len().div_ceil(8)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.shape;
        let mut out = format!(
            "{INPUT_MAGIC} {FORMAT_VERSION} {} {} {} {} {}\n",
            self.images.len(),
            s.channels,
            s.height,
            s.width,
            self.labels.is_some() as u8
        )
        .into_bytes();
        for (i, img) in self.images.iter().enumerate() {
            if let Some(l) = &self.labels {
                out.extend_from_slice(&l[i].to_le_bytes());
            }
            out.extend_from_slice(&img.to_packed_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let bad = |m: String| ContainerError::Input(m);
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not text".into()))?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.first() != Some(&INPUT_MAGIC) {
            return Err(ContainerError::BadMagic {
                found: tok.first().unwrap_or(&"").to_string(),
                expected: INPUT_MAGIC,
            });
        }
        if tok.get(1).and_then(|v| v.parse::<u32>().ok()) != Some(FORMAT_VERSION) {
            return Err(ContainerError::Version {
                found: tok.get(1).unwrap_or(&"").to_string(),
            });
        }
        let nums: Vec<usize> = tok[2..]
            .iter()
            .map(|t| t.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(format!("bad header {header:?}")))?;
        let &[count, c, h, w, labelled] = nums.as_slice() else {
            return Err(bad(format!("header needs count C H W labels, got {header:?}")));
        };
        if labelled > 1 {
            return Err(bad(format!("labels flag must be 0 or 1, got {labelled}")));
        }
        let shape = Shape3::new(c, h, w);
        let per = Self::image_bytes(shape) + 2 * labelled;
        let body = &bytes[nl + 1..];
        if body.len() != per * count {
            return Err(bad(format!(
                "body has {} bytes, {count} images of {shape} need {}",
                body.len(),
                per * count
            )));
        }
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::new();
        for rec in body.chunks(per) {
            let bitmap = if labelled == 1 {
                labels.push(u16::from_le_bytes([rec[0], rec[1]]));
                &rec[2..]
            } else {
                rec
            };
            images.push(SpikeTensor::from_packed_bytes(shape, bitmap).map_err(|e| bad(e.to_string()))?);
        }
        Self::new(shape, images, (labelled == 1).then_some(labels))
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }

    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }
}
