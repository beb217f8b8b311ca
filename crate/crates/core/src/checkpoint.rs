//! Plain-text tensor archive for [`ModelParams`].
//!
//! ```text
//! delayfb-checkpoint 1
//! schema <vocab_0>,<vocab_1>,...
//! elapsed_window <window seconds> <horizon seconds>|none
//! tensor <name> <rows> <cols>
//! <row 0: cols space-separated values>
//! ...
//! end
//! ```
//!
//! Tensors appear in [`ModelParams::tensor_names`] order. Biases are stored
//! as `1 x n`. Values use Rust's shortest round-trip scientific notation, so
//! reading a checkpoint back reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::domain::FeatureSchema;
use crate::error::{Error, Result};
use crate::nnet::{ModelParams, ModelShape};

pub const MAGIC: &str = "delayfb-checkpoint 1";

fn tensor_dims(p: &ModelParams) -> Vec<(usize, usize)> {
    let mut dims = vec![(p.embedding.rows, p.embedding.cols)];
    if let Some(e) = &p.elapsed {
        dims.push((e.table.rows, e.table.cols));
    }
    for l in &p.layers {
        dims.push((l.weight.rows, l.weight.cols));
        dims.push((1, l.bias.len()));
    }
    dims
}

pub fn to_string(params: &ModelParams) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let vocab: Vec<String> = params.schema.vocab_sizes().iter().map(u32::to_string).collect();
    let _ = writeln!(out, "schema {}", vocab.join(","));
    match &params.elapsed {
        Some(e) => {
            let _ = writeln!(out, "elapsed_window {} {}", e.encoder.w_a, e.encoder.horizon);
        }
        None => out.push_str("elapsed_window none\n"),
    }
    for ((name, data), (rows, cols)) in params
        .tensor_names()
        .iter()
        .zip(params.tensors())
        .zip(tensor_dims(params))
    {
        let _ = writeln!(out, "tensor {name} {rows} {cols}");
        for r in 0..rows {
            let row: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn write<W: Write>(mut w: W, params: &ModelParams) -> std::io::Result<()> {
    w.write_all(to_string(params).as_bytes())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::input(format!("checkpoint: {}", msg.into()))
}

pub fn read<R: BufRead>(r: R) -> Result<ModelParams> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of file"))?
            .map_err(|e| Error::io("<checkpoint>", e))
    };
    if next()? != MAGIC {
        return Err(bad("missing header"));
    }
    let schema_line = next()?;
    let vocab = schema_line
        .strip_prefix("schema ")
        .ok_or_else(|| bad("missing schema line"))?
        .split(',')
        .map(|v| v.trim().parse::<u32>().map_err(|_| bad("bad vocabulary size")))
        .collect::<Result<Vec<_>>>()?;
    let schema = FeatureSchema::new(vocab)?;
    let window_line = next()?;
    let (elapsed_window, horizon) = match window_line
        .strip_prefix("elapsed_window ")
        .ok_or_else(|| bad("missing elapsed_window line"))?
    {
        "none" => (None, None),
        s => {
            let (w, h) = s.split_once(' ').ok_or_else(|| bad("elapsed window needs a horizon"))?;
            let w = w.parse().map_err(|_| bad("bad elapsed window"))?;
            let h: i64 = h.parse().map_err(|_| bad("bad elapsed horizon"))?;
            (Some(w), Some(h))
        }
    };

    let mut tensors: Vec<(String, usize, usize, Vec<f64>)> = Vec::new();
    loop {
        let line = next()?;
        if line == "end" {
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(bad(format!("expected tensor line, got {line:?}")));
        }
        let rows: usize = parts[2].parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = parts[3].parse().map_err(|_| bad("bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = next()?;
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| bad(format!("bad value {tok:?}")))?);
            }
            if data.len() - before != cols {
                return Err(bad(format!("tensor {} row has wrong width", parts[1])));
            }
        }
        tensors.push((parts[1].to_string(), rows, cols, data));
    }

    // Dense tensors come in (weight, bias) pairs after the embedding tables.
    let skip = if elapsed_window.is_some() { 2 } else { 1 };
    if tensors.len() < skip + 2 || !(tensors.len() - skip).is_multiple_of(2) {
        return Err(bad("wrong number of tensors"));
    }
    let dense = &tensors[skip..];
    let hidden: Vec<usize> = dense[..dense.len() - 2].chunks(2).map(|c| c[0].1).collect();
    let shape = ModelShape {
        embedding_dim: tensors[0].2,
        hidden,
        elapsed_window,
    };
    let mut params = ModelParams::zeros(&schema, &shape)?;
    if let Some(h) = horizon {
        params.set_elapsed_horizon(h).map_err(|e| bad(e.to_string()))?;
    }
    let names = params.tensor_names();
    let dims = tensor_dims(&params);
    if names.len() != tensors.len() {
        return Err(bad("tensor count does not match architecture"));
    }
    for (((slot, (name, rows, cols, data)), expected), dim) in params
        .tensors_mut()
        .into_iter()
        .zip(&tensors)
        .zip(&names)
        .zip(&dims)
    {
        if name != expected || (*rows, *cols) != *dim {
            return Err(bad(format!("tensor {name} {rows}x{cols} does not fit {expected} {dim:?}")));
        }
        slot.copy_from_slice(data);
    }
    if !params.all_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok(params)
}

pub fn save(path: &std::path::Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, to_string(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &std::path::Path) -> Result<ModelParams> {
    read(crate::io::open_file(path)?)
}
