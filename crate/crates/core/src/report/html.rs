//! Self-contained HTML rendering.
//!
//! Every image is inlined as a data URI and user text is escaped with any
//! `scheme://` sequence broken up, so the page never references anything
//! outside itself.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::Serialize;

use super::Report;

const STYLE: &str = "\
@page { size: A4; margin: 15mm; }
body { font-family: Georgia, serif; color: #111; max-width: 180mm; margin: 0 auto; }
h1 { font-size: 18pt; } h2 { font-size: 13pt; border-bottom: 1px solid #999; }
section { margin-bottom: 8mm; page-break-inside: avoid; }
.result { display: flex; gap: 4mm; margin: 3mm 0; page-break-inside: avoid; }
.result img, .query img { max-width: 60mm; max-height: 60mm; }
.placeholder { width: 40mm; height: 30mm; border: 1px dashed #888; color: #666; font-size: 8pt; padding: 2mm; }
pre { white-space: pre-wrap; font-size: 9pt; }
table { border-collapse: collapse; } td, th { border: 1px solid #bbb; padding: 1mm 3mm; }
";

#[derive(Debug, Clone, Copy, Default)]
pub struct HtmlOptions {
    /// Adds a per-hotel summary of the selected results after the results.
    pub hotel_summary: bool,
}

/// An image that could not be embedded; a placeholder was rendered instead.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingThumbnail {
    /// `None` for the query image.
    pub image_id: Option<u64>,
    pub path: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HtmlRender {
    pub html: String,
    pub missing: Vec<MissingThumbnail>,
}

/// Escapes HTML and breaks every `://` so no text can form a URL.
pub fn neutralize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out.replace("://", "&#58;//")
}

fn sniff_mime(bytes: &[u8]) -> Option<&'static str> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some("image/png")
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        Some("image/jpeg")
    } else if bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a") {
        Some("image/gif")
    } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        Some("image/webp")
    } else {
        None
    }
}

/// Reads an image under `root` as a data URI. Absolute paths and `..` are
/// refused so a report cannot pull arbitrary files into the page.
fn data_uri(root: &Path, rel: &str) -> Result<String, String> {
    let rel_path = Path::new(rel);
    if rel.is_empty() || !rel_path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir)) {
        return Err("path must be relative to the asset root".into());
    }
    let bytes = fs::read(root.join(rel_path)).map_err(|e| format!("unreadable: {e}"))?;
    let mime = sniff_mime(&bytes).ok_or("not a png, jpeg, gif or webp image")?;
    Ok(format!("data:{mime};base64,{}", STANDARD.encode(bytes)))
}

fn image_or_placeholder(
    out: &mut String,
    root: &Path,
    path: Option<&str>,
    image_id: Option<u64>,
    missing: &mut Vec<MissingThumbnail>,
) {
    let result = match path {
        Some(p) => data_uri(root, p),
        None => Err("no thumbnail recorded".into()),
    };
    match result {
        Ok(uri) => {
            let _ = write!(out, "<img src=\"{uri}\" alt=\"\">");
        }
        Err(reason) => {
            let _ = write!(out, "<div class=\"placeholder\">image unavailable: {}</div>", neutralize_text(&reason));
            missing.push(MissingThumbnail { image_id, path: path.map(str::to_string), reason });
        }
    }
}

/// Renders the report as one HTML page. Thumbnails and the query image are
/// resolved against `asset_root`; each one that cannot be embedded is
/// listed in `missing` and shown as a placeholder.
pub fn render_html(report: &Report, asset_root: &Path, options: HtmlOptions) -> HtmlRender {
    let mut missing = Vec::new();
    let mut h = String::new();
    let id = neutralize_text(&report.report_id);
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>Report {id}</title>\n\
         <style>\n{STYLE}</style>\n</head>\n<body>\n<h1>Investigation report {id}</h1>\n<p>Created {} · updated {}</p>\n",
        report.created_at.to_rfc3339(),
        report.updated_at.to_rfc3339()
    );

    h.push_str("<section id=\"query\" class=\"query\">\n<h2>Masked query</h2>\n");
    image_or_placeholder(&mut h, asset_root, Some(&report.query_ref), None, &mut missing);
    h.push_str("\n</section>\n");

    let criteria = serde_json::to_string_pretty(&report.criteria).expect("criteria serialize");
    let _ = write!(
        h,
        "<section id=\"criteria\">\n<h2>Search criteria</h2>\n<pre>{}</pre>\n</section>\n",
        neutralize_text(&criteria)
    );

    let _ = write!(
        h,
        "<section id=\"notes\">\n<h2>Notes</h2>\n<pre>{}</pre>\n</section>\n",
        neutralize_text(&report.notes)
    );

    let _ = writeln!(h, "<section id=\"results\">\n<h2>Selected results ({})</h2>", report.entries.len());
    for (rank, e) in report.entries.iter().enumerate() {
        let _ = write!(h, "<div class=\"result\" data-image-id=\"{}\">", e.image_id);
        image_or_placeholder(&mut h, asset_root, e.thumbnail.as_deref(), Some(e.image_id), &mut missing);
        let _ = write!(
            h,
            "<div><strong>#{}</strong> image {} · hotel {} · similarity {:.4}",
            rank + 1,
            e.image_id,
            e.hotel_id,
            e.similarity
        );
        for x in &e.explanations {
            let _ = write!(h, "<br>explanation: {}", neutralize_text(x));
        }
        h.push_str("</div></div>\n");
    }
    h.push_str("</section>\n");

    if options.hotel_summary {
        let mut hotels: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        for e in &report.entries {
            let slot = hotels.entry(e.hotel_id).or_insert((f64::NEG_INFINITY, 0));
            slot.0 = slot.0.max(e.similarity);
            slot.1 += 1;
        }
        let mut rows: Vec<_> = hotels.into_iter().collect();
        rows.sort_by(|a, b| b.1 .0.total_cmp(&a.1 .0).then(a.0.cmp(&b.0)));
        h.push_str(
            "<section id=\"hotels\">\n<h2>Most likely hotels</h2>\n<table>\n\
             <tr><th>hotel</th><th>best similarity</th><th>images</th></tr>\n",
        );
        for (hotel, (best, count)) in rows {
            let _ = writeln!(h, "<tr><td>{hotel}</td><td>{best:.4}</td><td>{count}</td></tr>");
        }
        h.push_str("</table>\n</section>\n");
    }

    h.push_str("</body>\n</html>\n");
    HtmlRender { html: h, missing }
}
