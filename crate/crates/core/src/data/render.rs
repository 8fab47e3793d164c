use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DamageLevel {
    Undamaged = 0,
    Minor = 1,
    Heavy = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Column = 0,
    Wall = 1,
    Beam = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DamageType {
    Shear = 0,
    Flexural = 1,
    Asr = 2,
    Corrosion = 3,
}

impl DamageLevel {
    pub fn from_index(i: usize) -> Self {
        [Self::Undamaged, Self::Minor, Self::Heavy][i]
    }
}

impl Component {
    pub fn from_index(i: usize) -> Self {
        [Self::Column, Self::Wall, Self::Beam][i]
    }
}

impl DamageType {
    pub fn from_index(i: usize) -> Self {
        [Self::Shear, Self::Flexural, Self::Asr, Self::Corrosion][i]
    }
}

/// Ground-truth attributes of one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attributes {
    pub level: DamageLevel,
    pub spalling: bool,
    pub component: Component,
    /// Rendered only when `level` is not `Undamaged`.
    pub damage_type: DamageType,
}

impl Attributes {
    /// Label bytes in task order: level, spalling (`yes` = 0), component, type.
    pub fn labels(&self) -> [u8; 4] {
        [
            self.level as u8,
            if self.spalling { 0 } else { 1 },
            self.component as u8,
            self.damage_type as u8,
        ]
    }
}

/// Random draws made while rendering, exposed so tests can check labels
/// against what was actually painted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderParams {
    pub crack_segments: usize,
    pub spall_blobs: usize,
    pub rust_stains: usize,
    pub damp_patches: usize,
    /// Member band `(lo, hi)` across its short axis, in unit coordinates.
    pub band: (f64, f64),
}

struct Segment {
    a: (f64, f64),
    b: (f64, f64),
    half_width: f64,
}

impl Segment {
    fn distance(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (self.a.0 + t * dx, self.a.1 + t * dy);
        ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
    }
}

struct Blob {
    center: (f64, f64),
    radius: f64,
    harmonics: [(f64, f64); 3],
}

impl Blob {
    fn contains(&self, p: (f64, f64)) -> bool {
        let (dx, dy) = (p.0 - self.center.0, p.1 - self.center.1);
        let theta = dy.atan2(dx);
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(i, &(amp, phase))| amp * ((i as f64 + 2.0) * theta + phase).sin())
            .sum();
        (dx * dx + dy * dy).sqrt() < self.radius * (1.0 + wobble)
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Paints a `3×h×w` image for `attrs`. Coordinates are in pixels with `x`
/// to the right and `y` down.
pub fn render(attrs: &Attributes, h: usize, w: usize, rng: &mut SeededRng) -> (Tensor, RenderParams) {
    let (hf, wf) = (h as f64, w as f64);
    let scale = hf.min(wf);
    let mut params = RenderParams::default();

    let background = [
        rng.range(0.25, 0.45),
        rng.range(0.45, 0.65),
        rng.range(0.65, 0.9),
    ];
    let gray = rng.range(0.48, 0.62);
    let concrete = [gray + rng.range(-0.03, 0.03), gray, gray - rng.range(0.0, 0.04)];

    // Member band across the short axis, in unit coordinates.
    let center = rng.range(0.4, 0.6);
    let half = rng.range(0.2, 0.27);
    params.band = match attrs.component {
        Component::Wall => (0.0, 1.0),
        _ => (center - half, center + half),
    };
    let (lo, hi) = params.band;
    let in_member = |x: f64, y: f64| match attrs.component {
        Component::Column => (lo * wf..hi * wf).contains(&x),
        Component::Beam => (lo * hf..hi * hf).contains(&y),
        Component::Wall => true,
    };
    // Random point inside the member, kept away from its edges.
    let member_point = |rng: &mut SeededRng| -> (f64, f64) {
        let inset = 0.15 * (hi - lo);
        let across = rng.range(lo + inset, hi - inset);
        let along = rng.range(0.1, 0.9);
        match attrs.component {
            Component::Column => (across * wf, along * hf),
            Component::Beam => (along * wf, across * hf),
            Component::Wall => (rng.range(0.1, 0.9) * wf, rng.range(0.1, 0.9) * hf),
        }
    };
    // Long axis of the member as a unit vector; walls count as horizontal.
    let axis: (f64, f64) = match attrs.component {
        Component::Column => (0.0, 1.0),
        _ => (1.0, 0.0),
    };

    let mut cracks = Vec::new();
    let mut stains: Vec<Blob> = Vec::new();
    let mut damp: Vec<Blob> = Vec::new();
    if attrs.level != DamageLevel::Undamaged {
        let heavy = attrs.level == DamageLevel::Heavy;
        let n = if heavy { 5 + rng.below(2) } else { 2 };
        let half_width = if heavy { 0.9 } else { 0.45 };
        let mut line = |rng: &mut SeededRng, angle: f64, len: f64, at: (f64, f64), widen: f64| {
            let (dx, dy) = (angle.cos() * len / 2.0, angle.sin() * len / 2.0);
            cracks.push(Segment {
                a: (at.0 - dx, at.1 - dy),
                b: (at.0 + dx, at.1 + dy),
                half_width: widen * half_width * rng.range(0.85, 1.15),
            });
        };
        let axis_angle = axis.1.atan2(axis.0);
        match attrs.damage_type {
            DamageType::Shear => {
                for i in 0..n {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    let angle = sign * std::f64::consts::FRAC_PI_4 + rng.range(-0.15, 0.15);
                    let at = member_point(rng);
                    let len = scale * rng.range(0.45, 0.7);
                    line(rng, angle, len, at, 2.0);
                }
            }
            DamageType::Flexural => {
                for _ in 0..n {
                    let angle = axis_angle + std::f64::consts::FRAC_PI_2 + rng.range(-0.08, 0.08);
                    let at = member_point(rng);
                    let len = scale * rng.range(0.3, 0.45);
                    line(rng, angle, len, at, 1.0);
                }
            }
            DamageType::Asr => {
                for _ in 0..n * 4 {
                    let angle = rng.range(0.0, std::f64::consts::PI);
                    let at = member_point(rng);
                    let len = scale * rng.range(0.1, 0.18);
                    line(rng, angle, len, at, 1.0);
                }
                let count = 2;
                for _ in 0..count {
                    damp.push(Blob {
                        center: member_point(rng),
                        radius: scale * rng.range(0.2, 0.28),
                        harmonics: [(rng.range(0.0, 0.2), rng.range(0.0, 6.3)); 3],
                    });
                }
                params.damp_patches = count;
            }
            DamageType::Corrosion => {
                for _ in 0..n {
                    let angle = axis_angle + rng.range(-0.06, 0.06);
                    let at = member_point(rng);
                    let len = scale * rng.range(0.35, 0.55);
                    line(rng, angle, len, at, 1.0);
                }
                let count = 3;
                for _ in 0..count {
                    stains.push(Blob {
                        center: member_point(rng),
                        radius: scale * rng.range(0.15, 0.22),
                        harmonics: [(rng.range(0.0, 0.25), rng.range(0.0, 6.3)); 3],
                    });
                }
                params.rust_stains = count;
            }
        }
    }
    params.crack_segments = cracks.len();

    let mut blobs = Vec::new();
    if attrs.spalling {
        let count = 1 + rng.below(2);
        for _ in 0..count {
            blobs.push(Blob {
                center: member_point(rng),
                radius: scale * rng.range(0.15, 0.22),
                harmonics: [
                    (rng.range(0.1, 0.3), rng.range(0.0, 6.3)),
                    (rng.range(0.0, 0.2), rng.range(0.0, 6.3)),
                    (rng.range(0.0, 0.15), rng.range(0.0, 6.3)),
                ],
            });
        }
        params.spall_blobs = count;
    }

    let rust = [0.62, 0.33, 0.14];
    let exposed = [0.9, 0.78, 0.55];
    let damp_color = [0.3, 0.34, 0.3];
    let crack_color = [0.08, 0.07, 0.07];
    let noise_sigma = 0.02 + 0.01 * attrs.level as u8 as f64;

    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let member = in_member(p.0, p.1);
            let mut px = if member {
                let grain = rng.range(-0.04, 0.04);
                [concrete[0] + grain, concrete[1] + grain, concrete[2] + grain]
            } else {
                let shade = 0.15 * (y as f64 / hf);
                [background[0] - shade, background[1] - shade, background[2] - shade]
            };
            if member {
                if damp.iter().any(|s| s.contains(p)) {
                    px = lerp3(px, damp_color, 0.8);
                }
                if stains.iter().any(|s| s.contains(p)) {
                    px = lerp3(px, rust, 0.9);
                }
                if blobs.iter().any(|b| b.contains(p)) {
                    let rough = rng.range(-0.12, 0.12);
                    px = [exposed[0] + rough, exposed[1] + rough, exposed[2] + rough];
                }
                let coverage = cracks
                    .iter()
                    .map(|s| (s.half_width + 0.5 - s.distance(p)).clamp(0.0, 1.0))
                    .fold(0.0, f64::max);
                if coverage > 0.0 {
                    px = lerp3(px, crack_color, coverage);
                }
            }
            for (c, v) in px.iter().enumerate() {
                let noisy = v + noise_sigma * rng.normal();
                data[(c * h + y) * w + x] = noisy.clamp(0.0, 1.0);
            }
        }
    }
    let image = Tensor::new(vec![3, h, w], data).expect("image shape");
    (image, params)
}
