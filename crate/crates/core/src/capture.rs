//! Synthetic 360° captures.
//!
//! Payloads are 512x256 equirectangular PNGs filled with a seeded block
//! pattern and a text band naming the mission, DRP and capture pose. The
//! bytes are a pure function of the mission id, DRP id and the pose rounded to
//! 1 mm / 1 mrad.

use crate::localization::Pose2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PANORAMA_WIDTH: u32 = 512;
pub const PANORAMA_HEIGHT: u32 = 256;

const BLOCK: usize = 16;
const GLYPH_SCALE: usize = 2;
const BAND_TOP: usize = 116;
const BAND_HEIGHT: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub capture_id: String,
    pub mission_id: String,
    pub drp_id: String,
    /// Estimated pose when the shutter fired.
    pub pose_at_capture: Pose2D,
    /// Seconds since mission start.
    pub timestamp: f64,
    #[serde(with = "base64_bytes")]
    pub payload: Vec<u8>,
}

/// Serde adapter storing byte blobs as standard base64 strings.
pub mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s.as_bytes()).map_err(serde::de::Error::custom)
    }
}

/// Quantized pose used for payload identity: (mm, mm, mrad).
fn quantized(pose: &Pose2D) -> (i64, i64, i64) {
    (
        (pose.x * 1000.0).round() as i64,
        (pose.y * 1000.0).round() as i64,
        (pose.theta * 1000.0).round() as i64,
    )
}

/// Stable identifier of the capture taken for `drp_id` during `mission_id`.
pub fn capture_id(mission_id: &str, drp_id: &str) -> String {
    let digest = Sha256::new()
        .chain_update(mission_id.as_bytes())
        .chain_update([0u8])
        .chain_update(drp_id.as_bytes())
        .finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("c-{hex}")
}

/// Triggers the (simulated) camera. Timestamp is filled in by the caller.
pub fn capture_panorama(mission_id: &str, drp_id: &str, pose: &Pose2D) -> Capture {
    Capture {
        capture_id: capture_id(mission_id, drp_id),
        mission_id: mission_id.to_string(),
        drp_id: drp_id.to_string(),
        pose_at_capture: *pose,
        timestamp: 0.0,
        payload: render_panorama(mission_id, drp_id, pose),
    }
}

/// PNG bytes of the synthetic panorama.
pub fn render_panorama(mission_id: &str, drp_id: &str, pose: &Pose2D) -> Vec<u8> {
    let (qx, qy, qt) = quantized(pose);
    let seed: [u8; 32] = Sha256::new()
        .chain_update(mission_id.as_bytes())
        .chain_update([0u8])
        .chain_update(drp_id.as_bytes())
        .chain_update(qx.to_le_bytes())
        .chain_update(qy.to_le_bytes())
        .chain_update(qt.to_le_bytes())
        .finalize()
        .into();
    let mut rng = ChaCha8Rng::from_seed(seed);

    let (w, h) = (PANORAMA_WIDTH as usize, PANORAMA_HEIGHT as usize);
    let mut rgb = vec![0u8; w * h * 3];
    let sky: [u8; 3] = [rng.random_range(90..160), rng.random_range(140..200), rng.random_range(200..=255)];
    for by in 0..h / BLOCK {
        for bx in 0..w / BLOCK {
            let colour: [u8; 3] = if by < h / BLOCK / 2 - 1 {
                let shade = rng.random_range(0..24u8);
                [sky[0].saturating_add(shade), sky[1].saturating_add(shade), sky[2]]
            } else {
                [rng.random(), rng.random(), rng.random()]
            };
            for y in by * BLOCK..(by + 1) * BLOCK {
                for x in bx * BLOCK..(bx + 1) * BLOCK {
                    let i = (y * w + x) * 3;
                    rgb[i..i + 3].copy_from_slice(&colour);
                }
            }
        }
    }

    for y in BAND_TOP..BAND_TOP + BAND_HEIGHT {
        rgb[y * w * 3..(y + 1) * w * 3].fill(16);
    }
    let label = format!(
        "{}/{}/{:.3}/{:.3}/{:.3}",
        mission_id,
        drp_id,
        qx as f64 / 1000.0,
        qy as f64 / 1000.0,
        qt as f64 / 1000.0
    );
    draw_text(&mut rgb, w, 4, BAND_TOP + (BAND_HEIGHT - 5 * GLYPH_SCALE) / 2, &label);

    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, PANORAMA_WIDTH, PANORAMA_HEIGHT);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        writer.write_image_data(&rgb).expect("in-memory PNG data");
    }
    out
}

// 3x5 bitmap glyphs, rows top to bottom.
const GLYPHS: &[(char, &str)] = &[
    ('0', "111101101101111"),
    ('1', "010110010010111"),
    ('2', "111001111100111"),
    ('3', "111001111001111"),
    ('4', "101101111001001"),
    ('5', "111100111001111"),
    ('6', "111100111101111"),
    ('7', "111001001001001"),
    ('8', "111101111101111"),
    ('9', "111101111001111"),
    ('A', "010101111101101"),
    ('B', "110101110101110"),
    ('C', "011100100100011"),
    ('D', "110101101101110"),
    ('E', "111100110100111"),
    ('F', "111100110100100"),
    ('G', "011100101101011"),
    ('H', "101101111101101"),
    ('I', "111010010010111"),
    ('J', "001001001101010"),
    ('K', "101101110101101"),
    ('L', "100100100100111"),
    ('M', "101111111101101"),
    ('N', "110101101101101"),
    ('O', "010101101101010"),
    ('P', "110101110100100"),
    ('Q', "010101101110011"),
    ('R', "110101110101101"),
    ('S', "011100010001110"),
    ('T', "111010010010010"),
    ('U', "101101101101111"),
    ('V', "101101101101010"),
    ('W', "101101111111101"),
    ('X', "101101010101101"),
    ('Y', "101101010010010"),
    ('Z', "111001010100111"),
    ('-', "000000111000000"),
    ('.', "000000000000010"),
    ('/', "001001010100100"),
    ('_', "000000000000111"),
    (':', "000010000010000"),
    (' ', "000000000000000"),
];

const UNKNOWN_GLYPH: &str = "111001011000010";

fn glyph(c: char) -> &'static str {
    let c = c.to_ascii_uppercase();
    GLYPHS
        .iter()
        .find(|(g, _)| *g == c)
        .map_or(UNKNOWN_GLYPH, |(_, bits)| bits)
}

fn draw_text(rgb: &mut [u8], width: usize, x0: usize, y0: usize, text: &str) {
    let advance = 4 * GLYPH_SCALE;
    for (n, c) in text.chars().enumerate() {
        let gx = x0 + n * advance;
        if gx + 3 * GLYPH_SCALE > width {
            break;
        }
        for (k, bit) in glyph(c).bytes().enumerate() {
            if bit != b'1' {
                continue;
            }
            let (row, col) = (k / 3, k % 3);
            for dy in 0..GLYPH_SCALE {
                for dx in 0..GLYPH_SCALE {
                    let x = gx + col * GLYPH_SCALE + dx;
                    let y = y0 + row * GLYPH_SCALE + dy;
                    let i = (y * width + x) * 3;
                    rgb[i..i + 3].fill(240);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_is_deterministic() {
        let pose = Pose2D::new(3.2, 4.5, 0.7);
        let a = capture_panorama("m1", "d1", &pose);
        let b = capture_panorama("m1", "d1", &pose);
        assert_eq!(a.payload, b.payload);
        assert_eq!(a.capture_id, b.capture_id);
    }

    #[test]
    fn quantization_boundary() {
        let a = render_panorama("m1", "d1", &Pose2D::new(3.2, 4.5, 0.7));
        let b = render_panorama("m1", "d1", &Pose2D::new(3.202, 4.5, 0.7));
        assert_ne!(a, b);
        let c = render_panorama("m1", "d1", &Pose2D::new(3.2 + 1e-5, 4.5, 0.7));
        assert_eq!(a, c);
    }

    #[test]
    fn decodes_with_an_independent_decoder() {
        let bytes = render_panorama("m-abc", "lobby", &Pose2D::new(1.0, 2.0, -1.0));
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).unwrap();
        assert_eq!((img.width(), img.height()), (512, 256));
    }

    #[test]
    fn glyph_table_is_well_formed() {
        for (_, bits) in GLYPHS {
            assert_eq!(bits.len(), 15);
        }
        assert_eq!(glyph('a'), glyph('A'));
        assert_eq!(glyph('#'), UNKNOWN_GLYPH);
    }
}
