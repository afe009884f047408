//! Plain-text checkpoint format.
//!
//! ```text
//! resep-checkpoint 1
//! tensors <count>
//! param <name> <rank> <dim_0> ... <dim_{rank-1}>
//! <row-major values, space separated, shortest round-trip `{:e}` form>
//! ...
//! ```
//!
//! One `param` header line and one value line per tensor, in store order.
//! Values re-parse to the identical `f64` bits.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &str = "resep-checkpoint";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "tensors {}", store.len())?;
    for (name, t) in store.iter() {
        write!(w, "param {name} {}", t.shape().len())?;
        for d in t.shape() {
            write!(w, " {d}")?;
        }
        writeln!(w)?;
        let mut first = true;
        for v in t.data() {
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{v:e}")?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ParamStore> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut lines = BufReader::new(r).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, expected {what}")))
    };
    let header = next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(bad(format!("not a checkpoint: `{header}`")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing version".into()))?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count_line = next("tensor count")?;
    let count: usize = count_line
        .strip_prefix("tensors ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad(format!("bad tensor count line `{count_line}`")))?;

    let mut store = ParamStore::new();
    for _ in 0..count {
        let head = next("param header")?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        if fields.len() < 3 || fields[0] != "param" {
            return Err(bad(format!("bad param header `{head}`")));
        }
        let name = fields[1];
        let rank: usize = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad rank in `{head}`")))?;
        if fields.len() != 3 + rank {
            return Err(bad(format!("rank/shape disagree in `{head}`")));
        }
        let shape = fields[3..]
            .iter()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad shape in `{head}`")))?;
        let body = next("values")?;
        let data = body
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("parameter `{name}`: {e}")))?;
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("parameter `{name}`: {e}")))?;
        if store.id(name).is_some() {
            return Err(bad(format!("duplicate parameter `{name}`")));
        }
        store.add(name, t);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let f = fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    write_checkpoint(store, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_checkpoint(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40),
            rows in 1usize..4,
        ) {
            let cols = vals.len();
            let mut store = ParamStore::new();
            let data: Vec<f64> = (0..rows).flat_map(|_| vals.iter().copied()).collect();
            store.add("a.b.W_z", Tensor::matrix(rows, cols, data));
            store.add("bias", Tensor::new(vec![cols], vals.clone()).unwrap());
            let mut buf = Vec::new();
            write_checkpoint(&store, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 2);
            for ((n1, t1), (n2, t2)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        assert!(read_checkpoint("hello 1\n".as_bytes()).is_err());
        assert!(read_checkpoint("resep-checkpoint 2\ntensors 0\n".as_bytes()).is_err());
        let truncated = "resep-checkpoint 1\ntensors 1\nparam w 2 2 2\n1 2 3\n";
        assert!(read_checkpoint(truncated.as_bytes()).is_err());
    }

    #[test]
    fn layout_is_documented_form() {
        let mut store = ParamStore::new();
        store.add("enc.b", Tensor::row(vec![0.5, -1.0]));
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "resep-checkpoint 1\ntensors 1\nparam enc.b 2 1 2\n5e-1 -1e0\n"
        );
    }
}
