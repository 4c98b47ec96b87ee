//! Plain-text parameter checkpoints. Values are written in shortest
//! round-trip form, so reading a checkpoint back is exact.

use std::io::{BufRead, Write};

use super::{NetError, NetworkParams};

pub const CHECKPOINT_MAGIC: &str = "riskbudget-network v1";

fn io_err(e: std::io::Error) -> NetError {
    NetError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(params: &NetworkParams, mut out: W) -> Result<(), NetError> {
    params.check_shapes()?;
    writeln!(out, "{CHECKPOINT_MAGIC}").map_err(io_err)?;
    writeln!(
        out,
        "{} {} {} {}",
        params.n_assets(),
        params.hidden(),
        params.input_dim(),
        u8::from(params.mu.is_some())
    )
    .map_err(io_err)?;
    for v in params.iter() {
        writeln!(out, "{v:?}").map_err(io_err)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<NetworkParams, NetError> {
    let bad = |m: String| NetError::Checkpoint(m);
    let mut lines = input.lines();
    let mut next =
        || -> Result<Option<String>, NetError> { lines.next().transpose().map_err(io_err) };
    match next()? {
        Some(l) if l.trim() == CHECKPOINT_MAGIC => {}
        other => return Err(bad(format!("unrecognized header {other:?}"))),
    }
    let shape = next()?.ok_or_else(|| bad("missing shape line".into()))?;
    let dims: Vec<usize> = shape
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| bad(format!("bad shape line: {e}")))?;
    let [n, hidden, input_dim, gated] = dims[..] else {
        return Err(bad(format!(
            "shape line needs 4 fields, got {}",
            dims.len()
        )));
    };
    let mut params = NetworkParams::zeros(n, hidden, gated == 1);
    if params.input_dim() != input_dim {
        return Err(bad(format!(
            "input dimension {input_dim} does not match {n} assets"
        )));
    }
    let expected = params.len();
    for (count, slot) in params.iter_mut().enumerate() {
        let line =
            next()?.ok_or_else(|| bad(format!("expected {expected} values, got {count}")))?;
        *slot = line
            .trim()
            .parse()
            .map_err(|e| bad(format!("value {count}: {e}")))?;
    }
    if let Some(extra) = next()? {
        if !extra.trim().is_empty() {
            return Err(bad("trailing data after parameters".into()));
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        for gated in [false, true] {
            let mut p = NetworkParams::init(7, 32, gated, 0.5, 3);
            p.b1[0] = 1e-300;
            p.b2[1] = -0.1 + 0.2;
            let mut buf = Vec::new();
            write_checkpoint(&p, &mut buf).unwrap();
            let q = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let p = NetworkParams::init(2, 3, false, 0.5, 0);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            read_checkpoint(cut.as_bytes()),
            Err(NetError::Checkpoint(_))
        ));
        assert!(read_checkpoint("nonsense\n".as_bytes()).is_err());
    }
}
