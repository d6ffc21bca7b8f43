use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::config::TrainConfig;
use super::step::{Models, Optimizers};
use crate::error::{Error, Result};
use crate::kv;
use crate::nn::Module;
use crate::tensor::{dlif, Tensor};

pub const CONFIG_FILE: &str = "config.txt";
pub const STATE_FILE: &str = "state.txt";
pub const WEIGHTS_MANIFEST: &str = "weights.txt";
pub const TENSOR_DIR: &str = "tensors";
/// Full-precision copy of every tensor, concatenated in manifest order.
pub const EXACT_FILE: &str = "exact.f64";

/// Best epoch so far under the selection rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestRecord {
    pub epoch: usize,
    pub auc: f64,
    pub hter: f64,
}

impl BestRecord {
    /// Higher AUC wins, then lower HTER, then the later epoch.
    pub fn improved_by(&self, other: &BestRecord) -> bool {
        other.auc > self.auc || (other.auc == self.auc && other.hter <= self.hter)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub step: u64,
    /// Calibrated decision threshold of the saved weights.
    pub threshold: f64,
    pub best: Option<BestRecord>,
    pub rng: ChaCha8Rng,
    /// Dataset identity of each discriminator class.
    pub identities: Vec<usize>,
}

impl TrainState {
    fn to_pairs(&self) -> Vec<(String, String)> {
        let hex: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        let mut p = vec![
            ("epoch".to_string(), self.epoch.to_string()),
            ("step".into(), self.step.to_string()),
            ("threshold".into(), self.threshold.to_string()),
            ("rng_seed".into(), hex),
            ("rng_stream".into(), self.rng.get_stream().to_string()),
            ("rng_word_pos".into(), self.rng.get_word_pos().to_string()),
            ("identities".into(), kv::join(&self.identities)),
        ];
        if let Some(b) = self.best {
            p.push(("best_epoch".into(), b.epoch.to_string()));
            p.push(("best_auc".into(), b.auc.to_string()));
            p.push(("best_hter".into(), b.hter.to_string()));
        }
        p
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint state lacks `{k}`")))
        };
        let hex = get("rng_seed")?;
        if hex.len() != 64 {
            return Err(Error::Format("rng_seed must be 64 hex digits".into()));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Format(format!("bad rng_seed `{hex}`")))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(kv::parse_value("rng_stream", get("rng_stream")?)?);
        rng.set_word_pos(kv::parse_value("rng_word_pos", get("rng_word_pos")?)?);
        let best = match get("best_epoch") {
            Ok(e) => Some(BestRecord {
                epoch: kv::parse_value("best_epoch", e)?,
                auc: kv::parse_value("best_auc", get("best_auc")?)?,
                hter: kv::parse_value("best_hter", get("best_hter")?)?,
            }),
            Err(_) => None,
        };
        Ok(Self {
            epoch: kv::parse_value("epoch", get("epoch")?)?,
            step: kv::parse_value("step", get("step")?)?,
            threshold: kv::parse_value("threshold", get("threshold")?)?,
            best,
            rng,
            identities: kv::parse_list("identities", get("identities")?)?,
        })
    }
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub models: Models,
    pub opts: Optimizers,
    pub state: TrainState,
}

fn file_name(name: &str) -> String {
    format!("{name}.dlif")
}

/// `(name, shape, values)` for every saved tensor.
fn entries(models: &Models, opts: &Optimizers) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out: Vec<(String, Vec<usize>, Vec<f64>)> =
        models.params().into_iter().map(|(n, t)| (n, t.shape().to_vec(), t.data().to_vec())).collect();
    let shapes: Vec<(String, Vec<usize>)> = out.iter().map(|(n, s, _)| (n.clone(), s.clone())).collect();
    for (module, adam) in opts.named() {
        let own: Vec<&(String, Vec<usize>)> =
            shapes.iter().filter(|(n, _)| n.starts_with(&format!("{module}."))).collect();
        for (k, (n, s)) in own.iter().enumerate() {
            out.push((format!("adam.m.{n}"), s.clone(), adam.m[k].clone()));
            out.push((format!("adam.v.{n}"), s.clone(), adam.v[k].clone()));
        }
    }
    out
}

impl Checkpoint {
    /// Writes into `dir`, replacing any previous checkpoint there.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let tmp = PathBuf::from(format!("{}.partial", dir.display()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(tmp.join(TENSOR_DIR))?;
        let mut manifest = String::from("# name, file, shape\n");
        let mut exact = Vec::new();
        for (name, shape, data) in entries(&self.models, &self.opts) {
            let file = file_name(&name);
            dlif::write_raw(tmp.join(TENSOR_DIR).join(&file), &shape, &data)?;
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("{name}, {TENSOR_DIR}/{file}, {}\n", dims.join("x")));
            exact.extend(data.iter().flat_map(|v| v.to_le_bytes()));
        }
        fs::write(tmp.join(WEIGHTS_MANIFEST), manifest)?;
        fs::write(tmp.join(EXACT_FILE), exact)?;
        fs::write(tmp.join(CONFIG_FILE), self.config.to_text())?;
        let mut state = self.state.to_pairs();
        for (module, adam) in self.opts.named() {
            state.push((format!("adam_step_{module}"), adam.step.to_string()));
        }
        fs::write(tmp.join(STATE_FILE), kv::render(&state))?;
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&tmp, dir)?;
        Ok(())
    }

    /// Loads a checkpoint. Values come from the full-precision sidecar when
    /// present, otherwise from the DLIF1 files.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config = TrainConfig::load(dir.join(CONFIG_FILE))?;
        let pairs = kv::parse(&fs::read_to_string(dir.join(STATE_FILE))?)?;
        let state = TrainState::from_pairs(&pairs)?;
        let mut models = Models::new(&config, state.identities.len())?;
        let mut opts = Optimizers::new(&models, config.weight_decay);

        let manifest = fs::read_to_string(dir.join(WEIGHTS_MANIFEST))?;
        let listed: Vec<(String, String, Vec<usize>)> = manifest
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let f: Vec<&str> = l.split(',').map(str::trim).collect();
                if f.len() != 3 {
                    return Err(Error::Format(format!("bad weights manifest line `{l}`")));
                }
                let shape = f[2]
                    .split('x')
                    .map(|d| d.parse().map_err(|_| Error::Format(format!("bad shape `{}`", f[2]))))
                    .collect::<Result<Vec<usize>>>()?;
                Ok((f[0].to_string(), f[1].to_string(), shape))
            })
            .collect::<Result<_>>()?;
        let expected = entries(&models, &opts);
        if listed.len() != expected.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, configuration expects {}",
                listed.len(),
                expected.len()
            )));
        }
        let total: usize = expected.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        let exact = match fs::read(dir.join(EXACT_FILE)) {
            Ok(b) if b.len() == total * 8 => Some(
                b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect::<Vec<f64>>(),
            ),
            Ok(_) => return Err(Error::Format(format!("{EXACT_FILE} has the wrong length"))),
            Err(_) => None,
        };
        let mut values = Vec::with_capacity(listed.len());
        let mut offset = 0;
        for ((name, file, shape), (want, want_shape, _)) in listed.iter().zip(&expected) {
            if name != want || shape != want_shape {
                return Err(Error::Format(format!("expected tensor {want} {want_shape:?}, found {name} {shape:?}")));
            }
            let n: usize = shape.iter().product();
            let data = match &exact {
                Some(all) => all[offset..offset + n].to_vec(),
                None => {
                    let (s, d) = dlif::read_raw(dir.join(file))?;
                    if &s != shape {
                        return Err(Error::Format(format!("{file} has shape {s:?}, manifest says {shape:?}")));
                    }
                    d
                }
            };
            offset += n;
            values.push(data);
        }

        let mut it = values.into_iter();
        for (_, t) in models.params_mut() {
            let shape = t.shape().to_vec();
            *t = Tensor::param(&shape, it.next().expect("counted above"))?;
        }
        let steps: Vec<u64> = ["u", "c", "v", "d"]
            .iter()
            .map(|m| {
                let key = format!("adam_step_{m}");
                let v = pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str()).unwrap_or("0");
                kv::parse_value(&key, v)
            })
            .collect::<Result<_>>()?;
        for ((_, adam), step) in opts.named_mut().into_iter().zip(steps) {
            fill(adam, &mut it, step);
        }
        Ok(Self { config, models, opts, state })
    }
}

fn fill(adam: &mut Adam, it: &mut impl Iterator<Item = Vec<f64>>, step: u64) {
    adam.step = step;
    for k in 0..adam.m.len() {
        adam.m[k] = it.next().expect("counted above");
        adam.v[k] = it.next().expect("counted above");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::snapshot;
    use rand::Rng;

    fn small() -> TrainConfig {
        TrainConfig::from_text("input_size = 16\nstage_channels = 4,8,8\nfeature_dim = 8\ncwsa_reduction = 2\nseed = 9")
            .unwrap()
    }

    fn checkpoint() -> Checkpoint {
        let config = small();
        let models = Models::new(&config, 3).unwrap();
        let mut opts = Optimizers::new(&models, config.weight_decay);
        opts.u.step = 4;
        opts.d.m[0][1] = 0.125;
        opts.v.v[2][0] = 1.0 / 3.0;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        rng.set_stream(5);
        let _: [u64; 7] = rng.gen();
        let state = TrainState {
            epoch: 3,
            step: 12,
            threshold: 0.4321,
            best: Some(BestRecord { epoch: 2, auc: 0.75, hter: 0.2 }),
            rng,
            identities: vec![4, 8, 15],
        };
        Checkpoint { config, models, opts, state }
    }

    #[test]
    fn exact_round_trip() {
        let ck = checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        ck.save(&path).unwrap();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.state, ck.state);
        assert_eq!(back.opts, ck.opts);
        assert_eq!(snapshot(&back.models), snapshot(&ck.models));
        let mut a = back.state.rng.clone();
        let mut b = ck.state.rng.clone();
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn dlif_only_round_trip_is_f32_close() {
        let ck = checkpoint();
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path().join("ck")).unwrap();
        fs::remove_file(dir.path().join("ck").join(EXACT_FILE)).unwrap();
        let back = Checkpoint::load(dir.path().join("ck")).unwrap();
        for (a, b) in snapshot(&back.models).iter().flatten().zip(snapshot(&ck.models).iter().flatten()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let ck = checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        ck.save(&path).unwrap();
        fs::write(
            path.join(CONFIG_FILE),
            "input_size = 16\nstage_channels = 4,8,16\nfeature_dim = 16\ncwsa_reduction = 2",
        )
        .unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn selection_rule() {
        let b = BestRecord { epoch: 1, auc: 0.8, hter: 0.2 };
        assert!(b.improved_by(&BestRecord { epoch: 2, auc: 0.81, hter: 0.3 }));
        assert!(b.improved_by(&BestRecord { epoch: 2, auc: 0.8, hter: 0.2 }));
        assert!(!b.improved_by(&BestRecord { epoch: 2, auc: 0.8, hter: 0.21 }));
        assert!(!b.improved_by(&BestRecord { epoch: 2, auc: 0.7, hter: 0.0 }));
    }
}
