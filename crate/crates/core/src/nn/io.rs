//! Text container for model parameters.
//!
//! ```text
//! #model kind=gcn layers=2 hidden=16 heads=4 L=4 C=2
//! W0 4 16 0.123,-0.5,...
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{ArchKind, ModelArch, ModelState};
use crate::error::{Error, Result};

pub fn write_model(model: &ModelState, out: &mut impl Write) -> std::io::Result<()> {
    let a = &model.arch;
    writeln!(
        out,
        "#model kind={} layers={} hidden={} heads={} L={} C={}",
        a.kind, a.num_layers, a.hidden_dim, a.heads, model.feature_dim, model.num_classes
    )?;
    for (name, t) in model.names.iter().zip(&model.params) {
        let values: Vec<String> = t.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{name} {} {} {}", t.nrows(), t.ncols(), values.join(","))?;
    }
    Ok(())
}

pub fn read_model(input: impl Read, source: &Path) -> Result<ModelState> {
    let err = |line: usize, message: String| Error::Parse {
        file: source.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(input).lines();
    let header = lines
        .next()
        .ok_or_else(|| err(1, "empty model file".into()))?
        .map_err(|e| Error::io(source, e))?;
    let rest = header
        .strip_prefix("#model")
        .ok_or_else(|| err(1, "missing `#model` header".into()))?;
    let mut kind = None;
    let mut nums = [None; 5];
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(1, format!("bad header field `{tok}`")))?;
        let slot = match k {
            "kind" => {
                kind = Some(v.parse::<ArchKind>()?);
                continue;
            }
            "layers" => 0,
            "hidden" => 1,
            "heads" => 2,
            "L" => 3,
            "C" => 4,
            _ => return Err(err(1, format!("unknown header field `{k}`"))),
        };
        nums[slot] = Some(v.parse::<usize>().map_err(|_| err(1, format!("bad count `{v}`")))?);
    }
    let [Some(layers), Some(hidden), Some(heads), Some(l), Some(c)] = nums else {
        return Err(err(1, "incomplete header".into()));
    };
    let arch = ModelArch {
        kind: kind.ok_or_else(|| err(1, "missing kind".into()))?,
        num_layers: layers,
        hidden_dim: hidden,
        heads,
    };
    arch.validate()?;
    let expected = arch.param_shapes(l, c);

    let mut names = Vec::new();
    let mut params = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(4, ' ');
        let name = parts.next().unwrap_or_default().to_string();
        let mut dim = |what: &str| -> Result<usize> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(lineno, format!("bad {what}")))
        };
        let rows = dim("row count")?;
        let cols = dim("column count")?;
        let raw = parts.next().unwrap_or("");
        let values = if raw.is_empty() {
            Vec::new()
        } else {
            raw.split(',')
                .map(|v| v.parse::<f64>().map_err(|_| err(lineno, format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?
        };
        let t =
            Array2::from_shape_vec((rows, cols), values).map_err(|e| err(lineno, format!("tensor `{name}`: {e}")))?;
        if t.iter().any(|v| !v.is_finite()) {
            return Err(err(lineno, format!("tensor `{name}` has non-finite entries")));
        }
        names.push(name);
        params.push(t);
    }
    let got: Vec<(String, (usize, usize))> = names.iter().cloned().zip(params.iter().map(Array2::dim)).collect();
    if got != expected {
        return Err(Error::ShapeMismatch(format!(
            "{}: parameters do not match the header architecture",
            source.display()
        )));
    }
    Ok(ModelState {
        arch,
        feature_dim: l,
        num_classes: c,
        names,
        params,
    })
}
