//! Plain-text checkpoints of a trained score network.
//!
//! ```text
//! DIFFBOOT-CKPT v1
//! meta diffusion.T = 0.002
//! layers 7,48,48,1
//! x_mean <d_X values>
//! x_std <d_X values>
//! y_mean <d_Y values>
//! y_std <d_Y values>
//! weights 0 <out·in values, row-major>
//! biases 0 <out values>
//! ...
//! end
//! ```
//!
//! Numbers use 17 significant digits, so a reload is bit-exact.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::config::{parse_usize_list, FlatConfig};
use crate::data::{fmt_f64, parse_f64};
use crate::diffusion::{NetScore, StandardizationState};
use crate::error::{Error, Result};
use crate::mlp::MlpScoreNet;

pub const MAGIC: &str = "DIFFBOOT-CKPT v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub score: NetScore,
    /// Free-form settings recorded alongside the weights.
    pub meta: FlatConfig,
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let net = &ckpt.score.net;
    let st = &ckpt.score.standardization;
    writeln!(w, "{MAGIC}")?;
    for line in ckpt.meta.to_text().lines() {
        writeln!(w, "meta {line}")?;
    }
    let sizes: Vec<String> = net.layer_sizes().iter().map(ToString::to_string).collect();
    writeln!(w, "layers {}", sizes.join(","))?;
    writeln!(w, "x_mean {}", join(&st.x_mean))?;
    writeln!(w, "x_std {}", join(&st.x_std))?;
    writeln!(w, "y_mean {}", join(&st.y_mean))?;
    writeln!(w, "y_std {}", join(&st.y_std))?;
    for (i, layer) in net.layers().iter().enumerate() {
        writeln!(w, "weights {i} {}", join(layer.weights()))?;
        writeln!(w, "biases {i} {}", join(layer.biases()))?;
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse(format!("checkpoint: {}", msg.into()))
}

fn numbers(rest: &str) -> Result<Vec<f64>> {
    rest.split_whitespace().map(parse_f64).collect()
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Checkpoint> {
    let mut lines = r.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    if first.trim_end() != MAGIC {
        return Err(bad(format!("expected header {MAGIC:?}, found {first:?}")));
    }
    let mut meta_text = String::new();
    let mut sizes: Option<Vec<usize>> = None;
    let mut moments: [Option<Vec<f64>>; 4] = Default::default();
    let mut weights: Vec<Option<Vec<f64>>> = Vec::new();
    let mut biases: Vec<Option<Vec<f64>>> = Vec::new();
    let mut ended = false;
    for line in lines {
        let line = line?;
        let (tag, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
        match tag {
            "meta" => {
                meta_text.push_str(rest);
                meta_text.push('\n');
            }
            "layers" => {
                let s = parse_usize_list(rest)?;
                if s.len() < 2 {
                    return Err(bad("need at least two layer sizes"));
                }
                weights = vec![None; s.len() - 1];
                biases = vec![None; s.len() - 1];
                sizes = Some(s);
            }
            "x_mean" | "x_std" | "y_mean" | "y_std" => {
                let slot = ["x_mean", "x_std", "y_mean", "y_std"].iter().position(|t| *t == tag).unwrap();
                moments[slot] = Some(numbers(rest)?);
            }
            "weights" | "biases" => {
                let (idx, values) = rest.split_once(' ').unwrap_or((rest, ""));
                let idx: usize = idx.parse().map_err(|_| bad(format!("bad layer index {idx:?}")))?;
                let table = if tag == "weights" { &mut weights } else { &mut biases };
                let slot = table.get_mut(idx).ok_or_else(|| bad(format!("layer {idx} out of range")))?;
                *slot = Some(numbers(values)?);
            }
            "end" => {
                ended = true;
                break;
            }
            other => return Err(bad(format!("unknown record {other:?}"))),
        }
    }
    if !ended {
        return Err(bad("truncated file (no end record)"));
    }
    let sizes = sizes.ok_or_else(|| bad("missing layers record"))?;
    let [x_mean, x_std, y_mean, y_std] = moments;
    let missing = || bad("missing standardization record");
    let standardization = StandardizationState {
        x_mean: x_mean.ok_or_else(missing)?,
        x_std: x_std.ok_or_else(missing)?,
        y_mean: y_mean.ok_or_else(missing)?,
        y_std: y_std.ok_or_else(missing)?,
    };
    let params = weights
        .into_iter()
        .zip(biases)
        .enumerate()
        .map(|(i, (w, b))| match (w, b) {
            (Some(w), Some(b)) => Ok((w, b)),
            _ => Err(bad(format!("layer {i} is incomplete"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let net = MlpScoreNet::from_parameters(&sizes, params)?;
    Ok(Checkpoint {
        score: NetScore::new(net, standardization)?,
        meta: FlatConfig::parse(&meta_text)?,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_checkpoint(BufWriter::new(fs::File::create(path)?), ckpt)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(fs::File::open(path)?))
}
