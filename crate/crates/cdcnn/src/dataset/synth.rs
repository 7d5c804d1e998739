//! Synthetic gait-window generator.
//!
//! Class-conditioned recipes with per-subject offsets and gains, so that
//! subject-disjoint splits are a real generalization test rather than a
//! formality. Values are loosely modeled on an instrumented insole at 40 Hz:
//!
//! - Walking: a heel-to-toe pressure wave at a subject-specific cadence plus
//!   oscillatory accelerometer/gyroscope traces
//! - Standing: high static pressure, accelerometer near (0, 0, 1) g
//! - Sitting: near-zero pressure, very quiet inertial channels
//! - Tandem: pressure concentrated on a narrow subject-specific sensor
//!   subset plus slow, elevated gyroscope sway
//!
//! Additive Gaussian noise throughout.

use crate::dataset::{Dataset, SensorWindow, NUM_CHANNELS, NUM_CLASSES, TIME_STEPS};
use crate::rng::Rng;
use crate::tensor::Tensor;

const SAMPLE_RATE_HZ: f64 = 40.0;

struct SubjectProfile {
    cadence_hz: f64,
    pressure_gain: f64,
    accel_offset: [f64; 3],
    gyro_offset: [f64; 3],
}

impl SubjectProfile {
    fn draw(rng: &mut Rng) -> SubjectProfile {
        SubjectProfile {
            cadence_hz: rng.uniform(1.5, 2.5) as f64,
            pressure_gain: rng.uniform(0.8, 1.2) as f64,
            accel_offset: [
                0.02 * rng.normal_f64(),
                0.02 * rng.normal_f64(),
                0.02 * rng.normal_f64(),
            ],
            gyro_offset: [
                0.05 * rng.normal_f64(),
                0.05 * rng.normal_f64(),
                0.05 * rng.normal_f64(),
            ],
        }
    }
}

/// `num_subjects` subjects (ids 1..=n), `windows_per_subject_per_class`
/// windows for each of the four classes. Same seed, same bytes.
pub fn generate_synthetic(
    num_subjects: usize,
    windows_per_subject_per_class: usize,
    seed: u64,
) -> Dataset {
    let root = Rng::new(seed);
    let mut ds = Dataset::empty();
    let mut sample_id = 0u64;
    for subject in 1..=num_subjects as u32 {
        let mut rng = root.derive(subject as u64);
        let profile = SubjectProfile::draw(&mut rng);
        for label in 0..NUM_CLASSES {
            for _ in 0..windows_per_subject_per_class {
                let values = generate_window(label, &profile, &mut rng);
                ds.windows.push(SensorWindow {
                    values,
                    label,
                    subject_id: subject,
                    sample_id,
                });
                sample_id += 1;
            }
        }
    }
    ds
}

fn generate_window(label: usize, profile: &SubjectProfile, rng: &mut Rng) -> Tensor {
    let phase = rng.uniform(0.0, std::f32::consts::TAU) as f64;
    // Contact patch for tandem stance varies per window: the class signature
    // is the narrow concentration itself, not where it sits.
    let tandem_start = rng.next_below(15) as usize;
    let mut values = vec![0.0f32; TIME_STEPS * NUM_CHANNELS];
    for t in 0..TIME_STEPS {
        let seconds = t as f64 / SAMPLE_RATE_HZ;
        let row = &mut values[t * NUM_CHANNELS..(t + 1) * NUM_CHANNELS];
        match label {
            // Sitting: feet unloaded, everything quiet.
            0 => {
                for p in row.iter_mut().take(18) {
                    *p = (0.05 * profile.pressure_gain + 0.02 * rng.normal_f64()) as f32;
                }
                write_accel(row, profile, [0.0, 0.0, 1.0], 0.008, rng);
                write_gyro(row, profile, [0.0, 0.0, 0.0], 0.015, rng);
            }
            // Standing: full static load across the sole.
            1 => {
                for (i, p) in row.iter_mut().take(18).enumerate() {
                    let spatial = 1.2 + 0.1 * ((i as f64) * 0.7).sin();
                    *p = (profile.pressure_gain * spatial + 0.03 * rng.normal_f64()) as f32;
                }
                write_accel(row, profile, [0.0, 0.0, 1.0], 0.01, rng);
                write_gyro(row, profile, [0.0, 0.0, 0.0], 0.02, rng);
            }
            // Tandem stance: narrow contact patch, slow balance sway.
            2 => {
                let sway = 0.3 * (std::f64::consts::TAU * 0.5 * seconds + phase).sin();
                for (i, p) in row.iter_mut().take(18).enumerate() {
                    let loaded = i >= tandem_start && i < tandem_start + 4;
                    let base = if loaded { 1.4 } else { 0.1 };
                    *p = (profile.pressure_gain * base + 0.05 * rng.normal_f64()) as f32;
                }
                write_accel(row, profile, [0.05 * sway, 0.05 * sway, 1.0], 0.03, rng);
                write_gyro(row, profile, [sway, 0.8 * sway, 0.3 * sway], 0.08, rng);
            }
            // Walking: heel-to-toe wave at the subject's cadence.
            _ => {
                let cycle = std::f64::consts::TAU * profile.cadence_hz * seconds + phase;
                for (i, p) in row.iter_mut().take(18).enumerate() {
                    let foot_pos = i as f64 / 17.0; // 0 = heel, 1 = toe
                    let wave = (cycle - foot_pos * 0.8 * std::f64::consts::PI).sin().max(0.0);
                    *p = (profile.pressure_gain * 1.5 * wave + 0.05 * rng.normal_f64()) as f32;
                }
                let bounce = 0.25 * (2.0 * cycle).sin();
                write_accel(
                    row,
                    profile,
                    [0.3 * cycle.sin(), 0.2 * (2.0 * cycle + 0.5).sin(), 1.0 + bounce],
                    0.05,
                    rng,
                );
                write_gyro(
                    row,
                    profile,
                    [0.5 * cycle.cos(), 0.4 * cycle.sin(), 0.2 * (2.0 * cycle).cos()],
                    0.1,
                    rng,
                );
            }
        }
    }
    Tensor::from_vec(&[TIME_STEPS, NUM_CHANNELS], values).expect("window shape")
}

fn write_accel(row: &mut [f32], profile: &SubjectProfile, base: [f64; 3], noise: f64, rng: &mut Rng) {
    for axis in 0..3 {
        row[18 + axis] =
            (base[axis] + profile.accel_offset[axis] + noise * rng.normal_f64()) as f32;
    }
}

fn write_gyro(row: &mut [f32], profile: &SubjectProfile, base: [f64; 3], noise: f64, rng: &mut Rng) {
    for axis in 0..3 {
        row[21 + axis] =
            (base[axis] + profile.gyro_offset[axis] + noise * rng.normal_f64()) as f32;
    }
}
