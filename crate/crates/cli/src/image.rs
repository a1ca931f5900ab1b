//! PNG encode/decode with fixed settings so equal buffers give equal bytes.

use std::io::Cursor;

use cursor_attn_core::raster::ImageBuffer;

use crate::error::{CliError, Result};

fn png_err(e: impl std::fmt::Display) -> CliError {
    CliError::Png(e.to_string())
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        enc.set_filter(png::Filter::Sub);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&img.pixels).map_err(png_err)?;
        w.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Decode an 8-bit RGBA PNG.
pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(png_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(format!("expected 8-bit RGBA, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok(ImageBuffer { width: info.width as usize, height: info.height as usize, pixels: buf })
}
