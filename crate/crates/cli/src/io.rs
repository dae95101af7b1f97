use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use choicebench_core::catalog::load_catalog;
use choicebench_core::{Catalog, ExperimentConfig, ProductPair};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn read_catalog(path: &Path) -> Result<Catalog> {
    let file = File::open(path).with_context(|| format!("opening catalog {}", path.display()))?;
    let loaded = load_catalog(BufReader::new(file)).with_context(|| format!("loading {}", path.display()))?;
    for e in &loaded.errors {
        tracing::warn!(line = e.line, message = %e.message, "skipped catalog record");
    }
    if loaded.catalog.is_empty() {
        bail!("catalog {} has no usable products", path.display());
    }
    Ok(loaded.catalog)
}

pub fn write_catalog(catalog: &Catalog, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    catalog.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(items)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<BTreeMap<String, ProductPair>> {
    let pairs: Vec<ProductPair> = read_jsonl(path)?;
    Ok(pairs.into_iter().map(|p| (p.pair_id.clone(), p)).collect())
}

pub fn read_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let configs: Vec<ExperimentConfig> = read_jsonl(path)?;
    if configs.is_empty() {
        bail!("{} holds no configs", path.display());
    }
    Ok(configs)
}
