use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::generator::{generate_sample, IdentityPattern};
use super::report::{domain_shift_report, self_check_report};
use super::spec::DatasetSpec;
use super::{stream_rng, AttackType, Liveness, SampleRecord, Style, CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::dlif;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SAMPLES_DIR: &str = "samples";
pub const SOURCE_DIR: &str = "source";
pub const TARGET_DIR: &str = "target";
const MANIFEST_HEADER: &str =
    "# path, identity_id, liveness, attack_type, domain_tag, brightness, contrast, hue, blur, noise";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the dataset directory.
    pub path: String,
    pub identity_id: usize,
    pub liveness: Liveness,
    pub attack_type: AttackType,
    pub domain_tag: usize,
    pub style: Style,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        let s = &self.style;
        format!(
            "{}, {}, {}, {}, {}, {}, {}, {}, {}, {}",
            self.path,
            self.identity_id,
            self.liveness,
            self.attack_type,
            self.domain_tag,
            s.brightness,
            s.contrast,
            s.hue,
            s.blur,
            s.noise
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 10 {
            return Err(Error::Format(format!("manifest line has {} fields, expected 10: `{line}`", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| Error::Format(format!("bad number `{}` in `{line}`", f[i])))
        };
        let int = |i: usize| -> Result<usize> {
            f[i].parse().map_err(|_| Error::Format(format!("bad integer `{}` in `{line}`", f[i])))
        };
        let entry = Self {
            path: f[0].to_string(),
            identity_id: int(1)?,
            liveness: f[2].parse()?,
            attack_type: f[3].parse()?,
            domain_tag: int(4)?,
            style: Style { brightness: num(5)?, contrast: num(6)?, hue: num(7)?, blur: num(8)?, noise: num(9)? },
        };
        if entry.attack_type.liveness() != entry.liveness {
            return Err(Error::Format(format!("liveness and attack type disagree in `{line}`")));
        }
        Ok(entry)
    }

    pub fn write_manifest(entries: &[ManifestEntry]) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in entries {
            let _ = writeln!(out, "{}", e.to_line());
        }
        out
    }

    pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
        text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(Self::parse_line).collect()
    }
}

/// Manifest entries with their images held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: Option<PathBuf>,
    pub entries: Vec<ManifestEntry>,
    pub images: Vec<Vec<f64>>,
    pub image_size: usize,
}

impl Dataset {
    pub fn from_records(records: Vec<SampleRecord>) -> Result<Self> {
        let image_size = records.first().map(|r| r.size).ok_or_else(|| Error::invalid("empty dataset"))?;
        let mut entries = Vec::with_capacity(records.len());
        let mut images = Vec::with_capacity(records.len());
        for (i, r) in records.into_iter().enumerate() {
            if r.size != image_size {
                return Err(Error::invalid("records have mixed image sizes"));
            }
            entries.push(ManifestEntry {
                path: format!("{SAMPLES_DIR}/{i:05}.dlif"),
                identity_id: r.identity_id,
                liveness: r.liveness,
                attack_type: r.attack_type,
                domain_tag: r.domain_tag,
                style: r.style,
            });
            images.push(r.image);
        }
        Ok(Self { root: None, entries, images, image_size })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", manifest.display())))?;
        let entries = ManifestEntry::parse_manifest(&text)?;
        if entries.is_empty() {
            return Err(Error::Format(format!("{} lists no samples", manifest.display())));
        }
        let mut images = Vec::with_capacity(entries.len());
        let mut image_size = 0;
        for e in &entries {
            let (shape, data) = dlif::read_raw(dir.join(&e.path))?;
            match shape[..] {
                [c, h, w] if c == CHANNELS && h == w && (image_size == 0 || h == image_size) => image_size = h,
                _ => return Err(Error::Format(format!("{}: unexpected image shape {shape:?}", e.path))),
            }
            images.push(data);
        }
        Ok(Self { root: Some(dir.to_path_buf()), entries, images, image_size })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn domains(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.entries.iter().map(|e| e.domain_tag).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn identities(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.entries.iter().map(|e| e.identity_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Renders every sample of `spec` into `out/source` and `out/target`
/// (the latter only when target domains exist), each with a manifest and
/// DLIF1 images, plus the spec and the two data reports at the root.
pub fn generate_dataset(spec: &DatasetSpec, out: impl AsRef<Path>) -> Result<()> {
    spec.validate()?;
    let out = out.as_ref();
    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut records = Vec::new();
    let mut index = 0u64;
    for (domain, profile) in spec.domains.iter().enumerate() {
        let is_target = spec.target_domains.contains(&domain);
        let split = if is_target { TARGET_DIR } else { SOURCE_DIR };
        fs::create_dir_all(out.join(split).join(SAMPLES_DIR))?;
        for id in spec.identity_range(domain) {
            let pattern = IdentityPattern::new(spec.seed, id);
            for liveness in [Liveness::Live, Liveness::Spoof] {
                for k in 0..spec.samples_per_id {
                    let mut rng = stream_rng(spec.seed, index);
                    index += 1;
                    let style = profile.sample_style(&mut rng);
                    let attack = match liveness {
                        Liveness::Live => AttackType::None,
                        Liveness::Spoof => profile.sample_attack(&mut rng),
                    };
                    let rec = generate_sample(&pattern, liveness, attack, style, domain, spec.image_size, &mut rng)?;
                    let path = format!("{SAMPLES_DIR}/d{domain}_id{id:04}_{liveness}_{k:02}.dlif");
                    let s = spec.image_size;
                    dlif::write_raw(out.join(split).join(&path), &[CHANNELS, s, s], &rec.image)?;
                    let entry = ManifestEntry {
                        path,
                        identity_id: id,
                        liveness,
                        attack_type: attack,
                        domain_tag: domain,
                        style,
                    };
                    if is_target {
                        target.push(entry);
                    } else {
                        source.push(entry);
                    }
                    records.push(rec);
                }
            }
        }
    }
    fs::write(out.join(SOURCE_DIR).join(MANIFEST_FILE), ManifestEntry::write_manifest(&source))?;
    if !target.is_empty() {
        fs::write(out.join(TARGET_DIR).join(MANIFEST_FILE), ManifestEntry::write_manifest(&target))?;
    }
    fs::write(out.join("spec.txt"), spec.to_text())?;
    let all = Dataset::from_records(records)?;
    fs::write(out.join("self_check.txt"), self_check_report(&all.entries).to_text())?;
    fs::write(out.join("domain_shift.txt"), domain_shift_report(&all)?.to_text())?;
    Ok(())
}
