//! Procedural face frames laid out like the public gaze dataset, with
//! sidecar landmarks. Used for tests, demos and desk-scale experiments.
//!
//! Each subject gets its own skin, iris colour, eye shape and spacing. The
//! iris moves horizontally with yaw and vertically with pitch, and the upper
//! lid follows pitch, so both angles are recoverable from a patch.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::circle::Point;
use super::columbia::ColumbiaName;
use super::landmarks::{sidecar_path, write_sidecar, LANDMARK_COUNT};
use crate::error::{Error, Result};
use super::{prepare_sample, Dataset, EyeSide, FaceRecord, ManifestRow, Split};
use crate::geometry::{GazeDirection, GazeScale, COLUMBIA_PITCHES, COLUMBIA_YAWS};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub subjects: Vec<u32>,
    pub head_poses: Vec<i32>,
    pub pitches: Vec<i32>,
    pub yaws: Vec<i32>,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl SynthSpec {
    /// Subjects `1..=n`, frontal pose, the full 3×7 gaze grid.
    pub fn columbia(n_subjects: u32, seed: u64) -> Self {
        Self {
            subjects: (1..=n_subjects).collect(),
            head_poses: vec![0],
            pitches: COLUMBIA_PITCHES.iter().map(|&p| p as i32).collect(),
            yaws: COLUMBIA_YAWS.iter().map(|&y| y as i32).collect(),
            width: 240,
            height: 180,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
struct Appearance {
    skin: [f64; 3],
    iris: [f64; 3],
    hair: [f64; 3],
    eye_a: f64,
    eye_b: f64,
    spacing: f64,
    iris_scale: f64,
    lid_gain: f64,
    texture: [(f64, f64, f64); 3],
}

fn appearance(seed: u64, subject: u32) -> Appearance {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ (subject as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let tone: f64 = r.gen_range(0.35..0.95);
    let skin = [
        (tone * 235.0 + 20.0).min(250.0),
        tone * 180.0 + 25.0,
        tone * 150.0 + 20.0,
    ];
    let iris = match r.gen_range(0..4) {
        0 => [r.gen_range(70.0..110.0), r.gen_range(40.0..70.0), r.gen_range(15.0..35.0)],
        1 => [r.gen_range(40.0..80.0), r.gen_range(90.0..140.0), r.gen_range(150.0..210.0)],
        2 => [r.gen_range(60.0..100.0), r.gen_range(100.0..140.0), r.gen_range(50.0..90.0)],
        _ => [r.gen_range(30.0..55.0), r.gen_range(20.0..40.0), r.gen_range(10.0..25.0)],
    };
    let h = r.gen_range(15.0..90.0);
    Appearance {
        skin,
        iris,
        hair: [h, h * 0.8, h * 0.6],
        eye_a: r.gen_range(15.0..19.0),
        eye_b: r.gen_range(6.5..9.0),
        spacing: r.gen_range(84.0..100.0),
        iris_scale: r.gen_range(0.38..0.46),
        lid_gain: r.gen_range(0.2..0.35),
        texture: [
            (r.gen_range(0.03..0.09), r.gen_range(0.0..6.3), r.gen_range(4.0..9.0)),
            (r.gen_range(0.03..0.09), r.gen_range(0.0..6.3), r.gen_range(4.0..9.0)),
            (r.gen_range(0.1..0.3), r.gen_range(0.0..6.3), r.gen_range(2.0..5.0)),
        ],
    }
}

/// One eye's geometry in frame coordinates.
#[derive(Debug, Clone, Copy)]
struct Eye {
    cx: f64,
    cy: f64,
    a: f64,
    b_up: f64,
    b_lo: f64,
    iris_x: f64,
    iris_y: f64,
    iris_r: f64,
}

impl Eye {
    fn upper(&self, dx: f64) -> f64 {
        -self.b_up * (1.0 - (dx / self.a).powi(2))
    }

    fn lower(&self, dx: f64) -> f64 {
        self.b_lo * (1.0 - (dx / self.a).powi(2))
    }

    /// Six contour points clockwise from the image-left corner.
    fn landmarks(&self) -> [Point; 6] {
        let t = self.a / 3.0;
        [
            [self.cx - self.a, self.cy],
            [self.cx - t, self.cy + self.upper(-t)],
            [self.cx + t, self.cy + self.upper(t)],
            [self.cx + self.a, self.cy],
            [self.cx + t, self.cy + self.lower(t)],
            [self.cx - t, self.cy + self.lower(-t)],
        ]
    }
}

struct Scene {
    app: Appearance,
    eyes: [Eye; 2],
    face_cx: f64,
    face_cy: f64,
    face_rx: f64,
    face_ry: f64,
    height: f64,
}

fn build_scene(spec: &SynthSpec, subject: u32, pose: i32, pitch: i32, yaw: i32) -> Scene {
    let app = appearance(spec.seed, subject);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let pose_r = (pose as f64).to_radians();
    let face_cx = w / 2.0 + 0.25 * w * pose_r.sin();
    let eye_y = 0.45 * h;
    let half = app.spacing / 2.0 * pose_r.cos();
    let (sy, sp) = ((yaw as f64).to_radians().sin(), (pitch as f64).to_radians().sin());
    let (sy_max, sp_max) = (15f64.to_radians().sin(), 10f64.to_radians().sin());
    let eye = |cx: f64| {
        let a = app.eye_a * (0.85 + 0.15 * pose_r.cos());
        let b_up = app.eye_b * (1.0 + app.lid_gain * sp / sp_max);
        Eye {
            cx,
            cy: eye_y,
            a,
            b_up,
            b_lo: 0.75 * app.eye_b,
            iris_x: 0.5 * a * sy / sy_max,
            iris_y: -0.4 * app.eye_b * sp / sp_max,
            iris_r: app.iris_scale * a,
        }
    };
    Scene {
        eyes: [eye(face_cx - half), eye(face_cx + half)],
        face_cx,
        face_cy: 0.55 * h,
        face_rx: 0.42 * w * (0.8 + 0.2 * pose_r.cos()),
        face_ry: 0.5 * h,
        height: h,
        app,
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn shade(s: &Scene, x: f64, y: f64) -> [f64; 3] {
    let app = &s.app;
    let mut tex = 1.0;
    for &(amp, phase, period) in &app.texture {
        tex += amp * ((x / period + phase).sin() * (y / (period * 1.3) - phase).cos());
    }
    let fx = (x - s.face_cx) / s.face_rx;
    let fy = (y - s.face_cy) / s.face_ry;
    let shading = 0.8 + 0.25 * (1.0 - y / s.height);
    let mut c = if fx * fx + fy * fy <= 1.0 {
        app.skin.map(|v| v * shading * tex)
    } else {
        [40.0, 45.0, 55.0]
    };
    for e in &s.eyes {
        let dx = x - e.cx;
        let dy = y - e.cy;
        let brow = dy + 2.3 * e.b_up.max(e.b_lo) + 4.0 + 0.08 * dx * dx / e.a;
        if dx.abs() < 1.25 * e.a && brow.abs() < 2.6 {
            c = mix(c, app.hair, 0.85);
        }
        if dx.abs() >= e.a {
            continue;
        }
        let (up, lo) = (e.upper(dx), e.lower(dx));
        if dy > up && dy < lo {
            let corner = (dx / e.a).abs().powi(4);
            c = mix([236.0, 228.0, 224.0], [190.0, 150.0, 145.0], 0.6 * corner);
            let (ix, iy) = (dx - e.iris_x, dy - e.iris_y);
            let d = ix.hypot(iy);
            if d < e.iris_r {
                let radial = 0.75 + 0.35 * (d / e.iris_r);
                c = app.iris.map(|v| v * radial);
                if d < 0.45 * e.iris_r {
                    c = [12.0, 10.0, 10.0];
                }
                let hx = ix + 0.35 * e.iris_r;
                let hy = iy + 0.35 * e.iris_r;
                if hx.hypot(hy) < 0.17 * e.iris_r {
                    c = [250.0, 250.0, 250.0];
                }
            }
            // Shadow cast by the upper lid.
            let below_lid = (dy - up) / (lo - up);
            if below_lid < 0.18 {
                c = c.map(|v| v * (0.55 + 2.5 * below_lid));
            }
        } else if (dy - up).abs() < 1.3 || (dy - lo).abs() < 0.7 {
            c = mix(c, [35.0, 25.0, 25.0], 0.8);
        }
    }
    c
}

fn face_landmarks(s: &Scene) -> Vec<Point> {
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    for i in 0..17 {
        let t = std::f64::consts::PI * (0.05 + 0.9 * i as f64 / 16.0);
        pts.push([s.face_cx - s.face_rx * t.cos(), s.face_cy + 0.9 * s.face_ry * t.sin()]);
    }
    for e in &s.eyes {
        let by = e.cy - 2.3 * e.b_up.max(e.b_lo) - 4.0;
        for i in 0..5 {
            pts.push([e.cx - e.a + 0.5 * e.a * i as f64, by]);
        }
    }
    let nose_x = s.face_cx;
    let eye_y = s.eyes[0].cy;
    for i in 0..4 {
        pts.push([nose_x, eye_y + 6.0 + 7.0 * i as f64]);
    }
    for i in 0..5 {
        pts.push([nose_x - 10.0 + 5.0 * i as f64, eye_y + 34.0]);
    }
    for e in &s.eyes {
        pts.extend(e.landmarks());
    }
    let mouth_y = s.face_cy + 0.45 * s.face_ry;
    for i in 0..12 {
        let t = 2.0 * std::f64::consts::PI * i as f64 / 12.0;
        pts.push([nose_x - 20.0 * t.cos(), mouth_y + 7.0 * t.sin()]);
    }
    for i in 0..8 {
        let t = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
        pts.push([nose_x - 13.0 * t.cos(), mouth_y + 3.0 * t.sin()]);
    }
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    pts
}

/// Renders one frame and its 68 landmarks.
pub fn render_frame(spec: &SynthSpec, subject: u32, pose: i32, pitch: i32, yaw: i32) -> (RgbImage, Vec<Point>) {
    let scene = build_scene(spec, subject, pose, pitch, yaw);
    let frame_seed = spec.seed
        ^ (subject as u64) << 32
        ^ ((pose + 128) as u64) << 20
        ^ ((pitch + 128) as u64) << 10
        ^ (yaw + 128) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
    let noise = Normal::new(0.0, 2.5).expect("valid deviation");
    let img = RgbImage::from_fn(spec.width, spec.height, |x, y| {
        let mut acc = [0.0; 3];
        for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
            let c = shade(&scene, x as f64 + ox - 0.5, y as f64 + oy - 0.5);
            for k in 0..3 {
                acc[k] += c[k] / 4.0;
            }
        }
        let n = noise.sample(&mut rng);
        Rgb(acc.map(|v| (v + n).round().clamp(0.0, 255.0) as u8))
    });
    (img, face_landmarks(&scene))
}

/// Writes every (subject, pose, pitch, yaw) frame as
/// `<dir>/<subject>/<name>.png` with a landmark sidecar. Returns the count.
pub fn write_synthetic_dataset(dir: &Path, spec: &SynthSpec) -> Result<usize> {
    if spec.subjects.is_empty() {
        return Err(Error::invalid("synthetic dataset needs at least one subject"));
    }
    let mut count = 0;
    for &subject in &spec.subjects {
        let sub_dir = dir.join(format!("{subject:04}"));
        std::fs::create_dir_all(&sub_dir).map_err(|e| Error::io(&sub_dir, e))?;
        for &pose in &spec.head_poses {
            for &pitch in &spec.pitches {
                for &yaw in &spec.yaws {
                    let name = ColumbiaName {
                        subject,
                        distance: "2m".into(),
                        head_pose: pose,
                        pitch,
                        yaw,
                    };
                    let path = sub_dir.join(name.file_name("png"));
                    let (img, pts) = render_frame(spec, subject, pose, pitch, yaw);
                    img.save(&path)?;
                    write_sidecar(&sidecar_path(&path), &pts)?;
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// The same frames as [`write_synthetic_dataset`], extracted straight into
/// memory (both eyes, all subjects in the train split).
pub fn synthetic_dataset(spec: &SynthSpec, scale: &GazeScale) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for &subject in &spec.subjects {
        for &pose in &spec.head_poses {
            for &pitch in &spec.pitches {
                for &yaw in &spec.yaws {
                    let name = ColumbiaName {
                        subject,
                        distance: "2m".into(),
                        head_pose: pose,
                        pitch,
                        yaw,
                    };
                    let (img, landmarks) = render_frame(spec, subject, pose, pitch, yaw);
                    let record = FaceRecord {
                        path: name.file_name("png").into(),
                        subject: name.subject_id(),
                        distance: name.distance.clone(),
                        head_pose: pose,
                        gaze: GazeDirection::new(yaw as f64, pitch as f64),
                        landmarks,
                    };
                    for side in EyeSide::BOTH {
                        samples.push(prepare_sample(&img, &record, side, scale)?);
                        rows.push(ManifestRow {
                            path: format!("patches/{}_{side}.png", name.stem()),
                            subject: record.subject.clone(),
                            head_pose: pose,
                            pitch: pitch as f64,
                            yaw: yaw as f64,
                            eye_side: side,
                            split: Split::Train,
                            synthetic: false,
                        });
                    }
                }
            }
        }
    }
    Ok(Dataset::from_parts(rows, samples))
}
