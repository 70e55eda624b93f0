#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uab_core::imaging::{encode_png, ImageBuffer};

pub const UAB: &str = env!("CARGO_BIN_EXE_uab");
pub const RESIZE: &str = env!("CARGO_BIN_EXE_uab-resize");

/// Textured sources: smooth gradients plus seeded noise and a few edges.
pub fn write_sources(dir: &Path, n: usize, w: usize, h: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let noise: Vec<u8> = (0..w * h).map(|_| rng.random_range(0..40)).collect();
        let phase = rng.random_range(0..w);
        let img = ImageBuffer::from_fn_rgb(w, h, |x, y| {
            let edge = if (x + phase) % 24 < 12 { 90 } else { 0 };
            let n = noise[y * w + x] as usize;
            [
                ((x * 255 / w + edge + n) % 256) as u8,
                ((y * 255 / h + n) % 256) as u8,
                ((x + y + i * 17 + edge) % 256) as u8,
            ]
        })
        .unwrap();
        encode_png(&img, dir.join(format!("src{i:03}.png"))).unwrap();
    }
}

/// Native Lanczos plus external `uab-resize` filters; the last one only
/// produces x4 and reaches x2 by downscaling.
pub fn upscaler_specs(n_external: usize) -> serde_json::Value {
    let filters = ["nearest", "triangle", "gaussian", "catmull-rom"];
    let mut specs = vec![serde_json::json!({"name": "lanczos", "kind": "native_lanczos"})];
    for (i, f) in filters.iter().take(n_external).enumerate() {
        let last = i + 1 == n_external;
        specs.push(serde_json::json!({
            "name": format!("ext-{f}"),
            "kind": "external",
            "command_template": [RESIZE, "--filter", f, "{input}", "{output}", "{scale}"],
            "strategy": if last { "x4_then_downscale" } else { "direct" },
            "supported_scales": if last { vec![4] } else { vec![2, 4] },
        }));
    }
    serde_json::Value::Array(specs)
}

pub struct Run {
    pub root: PathBuf,
    pub config: PathBuf,
}

impl Run {
    /// A config in `root` with input/work/out under it.
    pub fn new(root: &Path, extra: serde_json::Value) -> Self {
        let mut cfg = serde_json::json!({
            "paths": {"input": "input", "work": "work", "out": "out"},
            "pipeline": {"common_height": 64, "factors": [2, 4]},
            "patch_size": 16,
            "crop_size": 16,
            "folds": 3,
            "forest": {"n_trees": 20},
            "jobs": 2
        });
        if let (Some(base), Some(add)) = (cfg.as_object_mut(), extra.as_object()) {
            for (k, v) in add {
                base.insert(k.clone(), v.clone());
            }
        }
        let config = root.join("run.json");
        std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        Run {
            root: root.to_path_buf(),
            config,
        }
    }

    pub fn out(&self) -> PathBuf {
        self.root.join("out")
    }

    pub fn uab(&self, args: &[&str]) -> Output {
        Command::new(UAB)
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .env("RUST_LOG", "warn")
            .env_remove("UAB_SEED")
            .env_remove("UAB_OUT")
            .env_remove("UAB_JOBS")
            .env_remove("UAB_CONFIG")
            .output()
            .unwrap()
    }

    pub fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.out().join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}"))
    }
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Ratings whose per-stimulus mean follows `appeal(stimulus_id)`.
pub fn write_ratings(path: &Path, ids: &[String], participants: usize, appeal: impl Fn(&str) -> f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("participant_id,stimulus_id,rating\n");
    for p in 0..participants {
        for id in ids {
            if rng.random_bool(0.3) {
                continue;
            }
            let v = appeal(id) + rng.random_range(-1.0..1.0);
            let r = v.round().clamp(1.0, 5.0) as u8;
            text.push_str(&format!("p{p:02},{id},{r}\n"));
        }
    }
    std::fs::write(path, text).unwrap();
}

pub fn manifest_ids(manifest_json: &str) -> Vec<String> {
    let v: serde_json::Value = serde_json::from_str(manifest_json).unwrap();
    v["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["stimulus_id"].as_str().unwrap().to_string())
        .collect()
}
