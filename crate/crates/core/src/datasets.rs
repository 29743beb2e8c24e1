//! Seeded synthetic training sets: ring-shaped Gaussian mixtures, a 2D swiss
//! roll and smooth bump-shaped trajectories.
//!
//! Trajectory samples are flattened frame-major: `[p0.x, p0.y, p1.x, p1.y, ..]`
//! for `dims_per_frame = 2`. Dimension 0 of a frame is horizontal position and
//! dimension 1 is height.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind-specific generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetParams {
    /// `components` isotropic Gaussians with centers evenly spaced on a circle.
    GaussianMixture {
        components: usize,
        radius: f64,
        std: f64,
    },
    SwissRoll { noise: f64, scale: f64 },
    /// Smooth paths whose height follows a bump of random amplitude.
    Trajectory {
        frames: usize,
        dims_per_frame: usize,
        /// Length scale of the smoothing kernel, in frames.
        smoothness: f64,
        #[serde(default = "default_amp_min")]
        amplitude_min: f64,
        #[serde(default = "default_amp_max")]
        amplitude_max: f64,
        #[serde(default = "default_wiggle")]
        wiggle: f64,
    },
}

fn default_amp_min() -> f64 {
    0.3
}
fn default_amp_max() -> f64 {
    1.2
}
fn default_wiggle() -> f64 {
    0.05
}

impl DatasetParams {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DatasetParams::GaussianMixture { .. } => "gaussian_mixture",
            DatasetParams::SwissRoll { .. } => "swiss_roll",
            DatasetParams::Trajectory { .. } => "trajectory",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetParams::GaussianMixture { .. } | DatasetParams::SwissRoll { .. } => 2,
            DatasetParams::Trajectory {
                frames,
                dims_per_frame,
                ..
            } => frames * dims_per_frame,
        }
    }

    /// Standard trajectory set: 32 frames of 2D positions.
    pub fn trajectory() -> Self {
        DatasetParams::Trajectory {
            frames: 32,
            dims_per_frame: 2,
            smoothness: 4.0,
            amplitude_min: default_amp_min(),
            amplitude_max: default_amp_max(),
            wiggle: default_wiggle(),
        }
    }
}

/// Full description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub params: DatasetParams,
    pub n: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 {
            return bad("dataset needs n >= 1".into());
        }
        match self.params {
            DatasetParams::GaussianMixture {
                components,
                radius,
                std,
            } => {
                if components == 0 || !(radius >= 0.0) || !(std >= 0.0) {
                    return bad(format!(
                        "mixture needs components >= 1, radius >= 0, std >= 0 (got {components}, {radius}, {std})"
                    ));
                }
            }
            DatasetParams::SwissRoll { noise, scale } => {
                if !(noise >= 0.0) || !(scale > 0.0) {
                    return bad(format!("swiss roll needs noise >= 0 and scale > 0 (got {noise}, {scale})"));
                }
            }
            DatasetParams::Trajectory {
                frames,
                dims_per_frame,
                smoothness,
                amplitude_min,
                amplitude_max,
                wiggle,
            } => {
                if frames < 2 || dims_per_frame == 0 || !(smoothness > 0.0) {
                    return bad("trajectory needs frames >= 2, dims_per_frame >= 1, smoothness > 0".into());
                }
                if !(0.0 <= amplitude_min && amplitude_min <= amplitude_max) || !(wiggle >= 0.0) {
                    return bad("trajectory amplitude range or wiggle invalid".into());
                }
            }
        }
        Ok(())
    }
}

/// Centers of a ring mixture.
pub fn mixture_centers(components: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..components)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / components as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws `spec.n` samples, one per row.
pub fn generate(spec: &DatasetSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim();
    let mut out = Array2::zeros((spec.n, d));
    match spec.params {
        DatasetParams::GaussianMixture {
            components,
            radius,
            std,
        } => {
            let centers = mixture_centers(components, radius);
            for mut row in out.rows_mut() {
                let c = centers[rng.random_range(0..components)];
                row[0] = c[0] + std * normal(&mut rng);
                row[1] = c[1] + std * normal(&mut rng);
            }
        }
        DatasetParams::SwissRoll { noise, scale } => {
            for mut row in out.rows_mut() {
                let t = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
                // unit-ish spread: the raw roll reaches radius ~14
                row[0] = scale * t * t.cos() / 5.0 + noise * normal(&mut rng);
                row[1] = scale * t * t.sin() / 5.0 + noise * normal(&mut rng);
            }
        }
        DatasetParams::Trajectory {
            frames,
            dims_per_frame,
            smoothness,
            amplitude_min,
            amplitude_max,
            wiggle,
        } => {
            let kernel = smoothing_matrix(frames, smoothness);
            for mut row in out.rows_mut() {
                let start = 0.3 * normal(&mut rng);
                let drift = rng.random_range(-1.0..1.0);
                let amp = if amplitude_max > amplitude_min {
                    rng.random_range(amplitude_min..amplitude_max)
                } else {
                    amplitude_min
                };
                for j in 0..dims_per_frame {
                    let white: Vec<f64> = (0..frames).map(|_| normal(&mut rng)).collect();
                    for f in 0..frames {
                        let s = f as f64 / (frames - 1) as f64;
                        let smooth: f64 = (0..frames).map(|k| kernel[[f, k]] * white[k]).sum();
                        let base = match (dims_per_frame, j) {
                            (1, 0) | (_, 1) => amp * (PI * s).sin(),
                            (_, 0) => start + drift * s,
                            _ => 0.0,
                        };
                        row[f * dims_per_frame + j] = base + wiggle * smooth;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Row-normalized Gaussian smoothing over frames, scaled so smoothed white
/// noise keeps unit variance.
fn smoothing_matrix(frames: usize, length: f64) -> Array2<f64> {
    let mut k = Array2::from_shape_fn((frames, frames), |(i, j)| {
        let d = i as f64 - j as f64;
        (-0.5 * d * d / (length * length)).exp()
    });
    for mut row in k.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    k
}

/// Splits off the last `ceil(n * frac)` rows as a held-out set; returns
/// `(train, held_out)`. Rows are i.i.d. so a positional split is unbiased.
pub fn split_holdout(data: &Array2<f64>, frac: f64) -> (Array2<f64>, Array2<f64>) {
    let n = data.nrows();
    let held = ((n as f64 * frac).ceil() as usize).min(n.saturating_sub(1));
    let cut = n - held;
    (
        data.slice(s![..cut, ..]).to_owned(),
        data.slice(s![cut.., ..]).to_owned(),
    )
}

/// Fraction of every dataset reserved for constraint-target extraction.
pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Writes the columnar text format:
///
/// ```text
/// # trust-sampling dataset v1
/// # kind: gaussian_mixture
/// # params: {"kind":"gaussian_mixture","components":8,...}
/// # n: 8000
/// # seed: 7
/// # dim: 2
/// c0,c1
/// 3.9871,0.0213
/// ...
/// ```
///
/// Values use the shortest decimal representation that round-trips the
/// 64-bit float exactly.
pub fn to_text(spec: &DatasetSpec, data: &Array2<f64>) -> String {
    let mut out = String::new();
    out.push_str("# trust-sampling dataset v1\n");
    let _ = writeln!(out, "# kind: {}", spec.params.kind_name());
    let _ = writeln!(
        out,
        "# params: {}",
        serde_json::to_string(&spec.params).expect("params serialize")
    );
    let _ = writeln!(out, "# n: {}", data.nrows());
    let _ = writeln!(out, "# seed: {}", spec.seed);
    let _ = writeln!(out, "# dim: {}", data.ncols());
    let cols: Vec<String> = (0..data.ncols()).map(|j| format!("c{j}")).collect();
    out.push_str(&cols.join(","));
    out.push('\n');
    for row in data.rows() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    out
}

/// Parses [`to_text`] output back into the spec and the sample matrix.
pub fn from_text(text: &str) -> Result<(DatasetSpec, Array2<f64>)> {
    let bad = |m: String| Error::Dataset(m);
    let mut lines = text.lines();
    if lines.next() != Some("# trust-sampling dataset v1") {
        return Err(bad("missing dataset header line".into()));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing header field {name}")))?;
        line.strip_prefix(&format!("# {name}: "))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected header field {name}, got {line:?}")))
    };
    let kind = field("kind")?;
    let params: DatasetParams = serde_json::from_str(&field("params")?)
        .map_err(|e| bad(format!("params: {e}")))?;
    if params.kind_name() != kind {
        return Err(bad(format!("kind {kind} disagrees with params")));
    }
    let parse_usize = |s: String, what: &str| {
        s.parse::<usize>()
            .map_err(|e| bad(format!("{what}: {e}")))
    };
    let n = parse_usize(field("n")?, "n")?;
    let seed = field("seed")?
        .parse::<u64>()
        .map_err(|e| bad(format!("seed: {e}")))?;
    let dim = parse_usize(field("dim")?, "dim")?;
    if dim != params.dim() {
        return Err(bad(format!("dim {dim} disagrees with params ({})", params.dim())));
    }
    let _columns = lines.next().ok_or_else(|| bad("missing column header".into()))?;
    let mut values = Vec::with_capacity(n * dim);
    let mut rows = 0;
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let before = values.len();
        for tok in line.split(',') {
            values.push(
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {i}: {e}")))?,
            );
        }
        if values.len() - before != dim {
            return Err(bad(format!("row {i} has {} values, expected {dim}", values.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(bad(format!("header declares {n} rows, found {rows}")));
    }
    let data = Array2::from_shape_vec((n, dim), values).expect("shape checked");
    Ok((DatasetSpec { params, n, seed }, data))
}

pub fn save(path: impl AsRef<Path>, spec: &DatasetSpec, data: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_text(spec, data)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(DatasetSpec, Array2<f64>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixture(k: usize, radius: f64, std: f64, n: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            params: DatasetParams::GaussianMixture {
                components: k,
                radius,
                std,
            },
            n,
            seed,
        }
    }

    #[test]
    fn single_zero_width_component_is_a_point_mass() {
        let data = generate(&mixture(1, 4.0, 0.0, 50, 1)).unwrap();
        assert!(data.rows().into_iter().all(|r| r[0] == 4.0 && r[1] == 0.0));
    }

    #[test]
    fn component_means_match_centers() {
        let data = generate(&mixture(8, 4.0, 0.1, 8000, 2)).unwrap();
        let centers = mixture_centers(8, 4.0);
        let mut sums = [[0.0f64; 2]; 8];
        let mut counts = [0usize; 8];
        for r in data.rows() {
            // nearest center; components are 3 units apart and 0.1 wide
            let (i, _) = centers
                .iter()
                .enumerate()
                .map(|(i, c)| (i, (r[0] - c[0]).powi(2) + (r[1] - c[1]).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            sums[i][0] += r[0];
            sums[i][1] += r[1];
            counts[i] += 1;
        }
        for i in 0..8 {
            assert!(counts[i] > 800);
            for j in 0..2 {
                let mean = sums[i][j] / counts[i] as f64;
                assert!((mean - centers[i][j]).abs() < 0.05, "component {i} dim {j}");
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        for params in [
            DatasetParams::SwissRoll {
                noise: 0.05,
                scale: 1.0,
            },
            DatasetParams::trajectory(),
        ] {
            let spec = DatasetSpec {
                params,
                n: 64,
                seed: 9,
            };
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
        assert_ne!(
            generate(&mixture(8, 4.0, 0.1, 10, 1)).unwrap(),
            generate(&mixture(8, 4.0, 0.1, 10, 2)).unwrap()
        );
    }

    #[test]
    fn trajectory_heights_follow_amplitude_range() {
        let spec = DatasetSpec {
            params: DatasetParams::trajectory(),
            n: 2000,
            seed: 4,
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.ncols(), 64);
        let max_heights: Vec<f64> = data
            .rows()
            .into_iter()
            .map(|r| (0..32).map(|f| r[2 * f + 1]).fold(f64::MIN, f64::max))
            .collect();
        let lo = max_heights.iter().cloned().fold(f64::MAX, f64::min);
        let hi = max_heights.iter().cloned().fold(f64::MIN, f64::max);
        assert!(lo > 0.2 && lo < 0.4, "lowest peak {lo}");
        assert!(hi > 1.1 && hi < 1.35, "highest peak {hi}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate(&mixture(0, 1.0, 0.1, 10, 1)).is_err());
        assert!(generate(&mixture(2, 1.0, -0.1, 10, 1)).is_err());
        assert!(generate(&mixture(2, 1.0, 0.1, 0, 1)).is_err());
    }

    #[test]
    fn holdout_split_sizes() {
        let data = generate(&mixture(8, 4.0, 0.1, 1000, 1)).unwrap();
        let (train, held) = split_holdout(&data, HOLDOUT_FRACTION);
        assert_eq!((train.nrows(), held.nrows()), (900, 100));
        assert_eq!(held.row(0), data.row(900));
    }

    #[test]
    fn text_format_round_trips_exactly() {
        let spec = DatasetSpec {
            params: DatasetParams::trajectory(),
            n: 5,
            seed: 3,
        };
        let data = generate(&spec).unwrap();
        let text = to_text(&spec, &data);
        let (spec2, data2) = from_text(&text).unwrap();
        assert_eq!(spec2, spec);
        assert!(data
            .iter()
            .zip(data2.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let broken = text.replacen("# n: 5", "# n: 6", 1);
        assert!(matches!(from_text(&broken), Err(Error::Dataset(_))));
    }
}
