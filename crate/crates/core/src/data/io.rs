//! Dataset directory layout:
//!
//! ```text
//! manifest.txt        key=value: sample count, modality specs, dtypes, provenance
//! modality_<i>.bin    row-major little-endian array, N x dim_i
//! labels.bin          little-endian i64 per sample (optional)
//! factors.bin         f64 generative factors (optional)
//! ```

use std::fs;
use std::path::Path;

use super::{LikelihoodFamily, ModalitySpec, MultimodalDataset, UnimodalDataset};
use crate::error::{Error, Result};
use crate::store::{self, Dtype, Manifest};

const FORMAT: &str = "jnf-dataset-v1";

pub(crate) fn spec_entries(m: &mut Manifest, prefix: &str, spec: &ModalitySpec) {
    m.set(format!("{prefix}.name"), &spec.name);
    m.set(format!("{prefix}.shape"), spec.shape_string());
    m.set(format!("{prefix}.family"), spec.family.name());
}

pub(crate) fn read_spec(m: &Manifest, prefix: &str, dir: &Path) -> Result<ModalitySpec> {
    let name = m.require(&format!("{prefix}.name"))?;
    let shape = ModalitySpec::parse_shape(m.require(&format!("{prefix}.shape"))?)
        .ok_or_else(|| Error::format(dir, format!("bad {prefix}.shape")))?;
    let family = LikelihoodFamily::parse(m.require(&format!("{prefix}.family"))?)
        .ok_or_else(|| Error::format(dir, format!("bad {prefix}.family")))?;
    ModalitySpec::new(name, shape, family)
}

pub fn save_dataset(
    dir: &Path,
    ds: &MultimodalDataset,
    dtype: Dtype,
    provenance: &Manifest,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut m = Manifest::new();
    m.set("format", FORMAT);
    m.set("n_samples", ds.len());
    m.set("n_modalities", ds.n_modalities());
    for (i, (spec, data)) in ds.specs.iter().zip(&ds.modalities).enumerate() {
        let prefix = format!("modality.{i}");
        spec_entries(&mut m, &prefix, spec);
        let file = format!("modality_{i}.bin");
        m.set(format!("{prefix}.file"), &file);
        m.set(format!("{prefix}.dtype"), dtype.name());
        m.set(format!("{prefix}.array_shape"), store::format_shape(data.dim()));
        store::write_array(&dir.join(file), data, dtype)?;
    }
    if let Some(labels) = &ds.labels {
        m.set("labels.file", "labels.bin");
        store::write_labels(&dir.join("labels.bin"), labels)?;
    }
    if let Some(f) = &ds.factors {
        m.set("factors.file", "factors.bin");
        m.set("factors.shape", store::format_shape(f.dim()));
        store::write_array(&dir.join("factors.bin"), f, Dtype::F64)?;
    }
    for (k, v) in provenance.entries() {
        m.set(format!("provenance.{k}"), v);
    }
    m.write(&dir.join("manifest.txt"))
}

pub fn load_dataset(dir: &Path) -> Result<MultimodalDataset> {
    let m = Manifest::read(&dir.join("manifest.txt"))?;
    if m.get("format") != Some(FORMAT) {
        return Err(Error::format(dir, "not a multimodal dataset directory"));
    }
    let n: usize = m.parse_value("n_samples")?;
    let n_mod: usize = m.parse_value("n_modalities")?;
    let mut specs = Vec::with_capacity(n_mod);
    let mut modalities = Vec::with_capacity(n_mod);
    for i in 0..n_mod {
        let prefix = format!("modality.{i}");
        let spec = read_spec(&m, &prefix, dir)?;
        let dtype = Dtype::parse(m.require(&format!("{prefix}.dtype"))?)
            .ok_or_else(|| Error::format(dir, "bad dtype"))?;
        let file = m.require(&format!("{prefix}.file"))?;
        modalities.push(store::read_array(&dir.join(file), (n, spec.dim()), dtype)?);
        specs.push(spec);
    }
    let labels = match m.get("labels.file") {
        Some(f) => Some(store::read_labels(&dir.join(f))?),
        None => None,
    };
    let mut ds = MultimodalDataset::new(specs, modalities, labels)?;
    if let Some(f) = m.get("factors.file") {
        let shape = m
            .get("factors.shape")
            .and_then(store::parse_shape)
            .ok_or_else(|| Error::format(dir, "bad factors.shape"))?;
        ds.factors = Some(store::read_array(&dir.join(f), shape, Dtype::F64)?);
    }
    Ok(ds)
}

/// A unimodal source for [`super::pair_by_label`]: `manifest.txt` with
/// `name`, `shape`, `family`, `dtype`, `n_samples`, plus `data.bin` and
/// `labels.bin`.
pub fn load_unimodal(dir: &Path) -> Result<UnimodalDataset> {
    let m = Manifest::read(&dir.join("manifest.txt"))?;
    let spec = read_spec(&m, "modality", dir)?;
    let n: usize = m.parse_value("n_samples")?;
    let dtype = Dtype::parse(m.get("modality.dtype").unwrap_or("f32"))
        .ok_or_else(|| Error::format(dir, "bad dtype"))?;
    let data = store::read_array(&dir.join("data.bin"), (n, spec.dim()), dtype)?;
    let labels = store::read_labels(&dir.join("labels.bin"))?;
    if labels.len() != n {
        return Err(Error::format(dir, "label count differs from n_samples"));
    }
    Ok(UnimodalDataset { spec, data, labels })
}

pub fn save_unimodal(dir: &Path, ds: &UnimodalDataset, dtype: Dtype) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut m = Manifest::new();
    spec_entries(&mut m, "modality", &ds.spec);
    m.set("modality.dtype", dtype.name());
    m.set("n_samples", ds.data.nrows());
    store::write_array(&dir.join("data.bin"), &ds.data, dtype)?;
    store::write_labels(&dir.join("labels.bin"), &ds.labels)?;
    m.write(&dir.join("manifest.txt"))
}
