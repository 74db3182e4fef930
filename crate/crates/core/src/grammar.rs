//! Parsing and rendering of model answers that carry bounding boxes.
//!
//! The canonical answer grammar is line oriented:
//!
//! ```text
//! View <name>:                       (optional, multi-view answers)
//! Frame <n>:                         (1-based image index within the request)
//! ID <k>: <bbox>x,y,w,h</bbox>
//! NEW: ID <k>: <bbox>x,y,w,h</bbox>  (object seen for the first time)
//! GONE: <k>                          (object left the scene)
//! ```
//!
//! Coordinates are normalized top-left/size values rendered with six
//! decimals. Anything that does not fit the grammar is kept in
//! [`ParsedResponse::residual_text`].

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::track::TrackId;

/// Reward tiers for how a box was written. Ordered worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatClass {
    NoBox,
    UntaggedNumbers,
    AltFormat,
    WellFormed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxEntry {
    pub object_id: Option<TrackId>,
    pub bbox: Option<BBox>,
    pub format_class: FormatClass,
    pub raw_span: Range<usize>,
    pub view: Option<String>,
    pub frame: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewObject {
    /// Answer-local id that later lines of the same answer may refer to.
    pub provisional_id: Option<TrackId>,
    pub bbox: Option<BBox>,
    pub format_class: FormatClass,
    pub raw_span: Range<usize>,
    pub view: Option<String>,
    pub frame: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disappearance {
    pub object_id: TrackId,
    pub view: Option<String>,
    pub frame: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub entries: Vec<BoxEntry>,
    pub residual_text: String,
    pub declared_new_objects: Vec<NewObject>,
    pub declared_disappeared: Vec<Disappearance>,
}

impl ParsedResponse {
    /// Best per-region class, or `NoBox` if no region was found.
    pub fn best_class(&self) -> FormatClass {
        self.entries
            .iter()
            .map(|e| e.format_class)
            .chain(self.declared_new_objects.iter().map(|n| n.format_class))
            .max()
            .unwrap_or(FormatClass::NoBox)
    }

    /// The first box in textual order, from either an entry or a `NEW:` line.
    pub fn first_bbox(&self) -> Option<BBox> {
        let a = self.entries.iter().filter_map(|e| e.bbox.map(|b| (e.raw_span.start, b)));
        let b = self.declared_new_objects.iter().filter_map(|n| n.bbox.map(|b| (n.raw_span.start, b)));
        a.chain(b).min_by_key(|(pos, _)| *pos).map(|(_, b)| b)
    }

    /// Number of box regions that are not well formed.
    pub fn malformed_regions(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.format_class)
            .chain(self.declared_new_objects.iter().map(|n| n.format_class))
            .filter(|c| *c != FormatClass::WellFormed)
            .count()
    }
}

const NUM: &str = r"-?\d+(?:\.\d+)?";

static TAG_PAIR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<bbox>(.*?)</bbox>").unwrap());
static TAG_FRAGMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"</?bbox\b").unwrap());
static CANON_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d+(?:\.\d{1,6})?$").unwrap());
static ANY_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(NUM).unwrap());
static BRACKETED_TUPLE: LazyLock<Regex> = LazyLock::new(|| {
    let sep = r"\s*[,;\s]\s*";
    Regex::new(&format!(r"[\(\[]\s*{NUM}{sep}{NUM}{sep}{NUM}{sep}{NUM}\s*[\)\]]")).unwrap()
});
static BARE_TUPLE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"{NUM}\s*,\s*{NUM}\s*,\s*{NUM}\s*,\s*{NUM}")).unwrap());

static VIEW_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^View\s+(.+?)\s*:$").unwrap());
static FRAME_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^Frame\s+(\d+)\s*:$").unwrap());
static ID_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^ID\s+(\d+)\s*:\s*").unwrap());
static NEW_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^NEW\s*:\s*(?:ID\s+(\d+)\s*:\s*)?").unwrap());
static GONE_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^GONE\s*:\s*(\d+(?:\s*,\s*\d+)*)\s*$").unwrap());

/// Largest accepted coordinate before clamping to 1.
const MAX_COORD: f64 = 1.000001;

/// Classifies the interior of a `<bbox>...</bbox>` pair.
///
/// Returns the class plus a box when four in-range numbers could be read,
/// even if they were not written canonically.
pub fn parse_tag_interior(inner: &str) -> (FormatClass, Option<BBox>) {
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() == 4 && parts.iter().all(|p| CANON_NUMBER.is_match(p)) {
        let v: Vec<f64> = parts.iter().map(|p| p.parse::<f64>().unwrap()).collect();
        if v.iter().all(|x| *x <= MAX_COORD) {
            let c = |x: f64| x.min(1.0);
            if let Ok(b) = BBox::new(c(v[0]), c(v[1]), c(v[2]), c(v[3])) {
                return (FormatClass::WellFormed, Some(b));
            }
        }
    }
    (FormatClass::AltFormat, lenient_box(inner))
}

/// Reads four numbers out of arbitrary text as `x,y,w,h` if they fit the frame.
fn lenient_box(text: &str) -> Option<BBox> {
    let nums: Vec<f64> = ANY_NUMBER.find_iter(text).filter_map(|m| m.as_str().parse().ok()).collect();
    if nums.len() != 4 || nums.iter().any(|v| !(0.0..=MAX_COORD).contains(v)) {
        return None;
    }
    BBox::new(nums[0], nums[1], nums[2].min(1.0), nums[3].min(1.0)).ok()
}

/// Response-level format class; the best class present wins.
pub fn classify_format(text: &str) -> FormatClass {
    let mut any_pair = false;
    for cap in TAG_PAIR.captures_iter(text) {
        any_pair = true;
        if parse_tag_interior(&cap[1]).0 == FormatClass::WellFormed {
            return FormatClass::WellFormed;
        }
    }
    if any_pair {
        return FormatClass::AltFormat;
    }
    let bracketed = BRACKETED_TUPLE.is_match(text);
    if bracketed && TAG_FRAGMENT.is_match(text) {
        return FormatClass::AltFormat;
    }
    if bracketed || BARE_TUPLE.is_match(text) {
        return FormatClass::UntaggedNumbers;
    }
    FormatClass::NoBox
}

struct Region {
    class: FormatClass,
    bbox: Option<BBox>,
    span: Range<usize>,
}

/// Finds the first box-like region in `s`; offsets are relative to `s`.
fn first_region(s: &str) -> Option<Region> {
    if let Some(cap) = TAG_PAIR.captures(s) {
        let (class, bbox) = parse_tag_interior(&cap[1]);
        return Some(Region { class, bbox, span: cap.get(0).unwrap().range() });
    }
    BRACKETED_TUPLE
        .find(s)
        .or_else(|| BARE_TUPLE.find(s))
        .map(|m| Region { class: FormatClass::UntaggedNumbers, bbox: lenient_box(m.as_str()), span: m.range() })
}

/// All box-like regions in a free-text line.
fn all_regions(s: &str) -> Vec<Region> {
    let tagged: Vec<Region> = TAG_PAIR
        .captures_iter(s)
        .map(|cap| {
            let (class, bbox) = parse_tag_interior(&cap[1]);
            Region { class, bbox, span: cap.get(0).unwrap().range() }
        })
        .collect();
    if !tagged.is_empty() {
        return tagged;
    }
    let mut out: Vec<Region> = BRACKETED_TUPLE
        .find_iter(s)
        .map(|m| Region { class: FormatClass::UntaggedNumbers, bbox: lenient_box(m.as_str()), span: m.range() })
        .collect();
    if out.is_empty() {
        out = BARE_TUPLE
            .find_iter(s)
            .map(|m| Region { class: FormatClass::UntaggedNumbers, bbox: lenient_box(m.as_str()), span: m.range() })
            .collect();
    }
    out
}

fn shift(r: Range<usize>, by: usize) -> Range<usize> {
    r.start + by..r.end + by
}

/// Parses a model answer. Total: never fails, unparsed text goes to the residual.
pub fn parse_response(text: &str) -> ParsedResponse {
    let mut out = ParsedResponse::default();
    let mut residual: Vec<&str> = Vec::new();
    let mut view: Option<String> = None;
    let mut frame: Option<u32> = None;
    let mut offset = 0usize;

    for raw_line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += raw_line.len();
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let base = line_start + (raw_line.len() - raw_line.trim_start().len());

        if let Some(c) = VIEW_LINE.captures(line) {
            view = Some(c[1].to_string());
            frame = None;
            continue;
        }
        if let Some(c) = FRAME_LINE.captures(line) {
            if let Ok(n) = c[1].parse() {
                frame = Some(n);
                continue;
            }
        }
        if let Some(c) = GONE_LINE.captures(line) {
            let ids: Option<Vec<TrackId>> = c[1].split(',').map(|s| s.trim().parse().ok()).collect();
            if let Some(ids) = ids {
                out.declared_disappeared.extend(ids.into_iter().map(|object_id| Disappearance {
                    object_id,
                    view: view.clone(),
                    frame,
                }));
                continue;
            }
        }
        if let Some(c) = ID_LINE.captures(line) {
            let head = c.get(0).unwrap().end();
            if let (Ok(id), Some(region)) = (c[1].parse::<TrackId>(), first_region(&line[head..])) {
                out.entries.push(BoxEntry {
                    object_id: Some(id),
                    bbox: region.bbox,
                    format_class: region.class,
                    raw_span: shift(region.span, base + head),
                    view: view.clone(),
                    frame,
                });
                continue;
            }
        }
        if let Some(c) = NEW_LINE.captures(line) {
            let head = c.get(0).unwrap().end();
            let pid = match c.get(1) {
                Some(m) => m.as_str().parse::<TrackId>().ok().map(Some),
                None => Some(None),
            };
            if let (Some(provisional_id), Some(region)) = (pid, first_region(&line[head..])) {
                out.declared_new_objects.push(NewObject {
                    provisional_id,
                    bbox: region.bbox,
                    format_class: region.class,
                    raw_span: shift(region.span, base + head),
                    view: view.clone(),
                    frame,
                });
                continue;
            }
        }
        let regions = all_regions(line);
        if regions.is_empty() {
            residual.push(line);
            continue;
        }
        for r in regions {
            out.entries.push(BoxEntry {
                object_id: None,
                bbox: r.bbox,
                format_class: r.class,
                raw_span: shift(r.span, base),
                view: view.clone(),
                frame,
            });
        }
    }
    out.residual_text = residual.join("\n");
    out
}

/// `<bbox>x,y,w,h</bbox>` with six decimals.
pub fn render_bbox(b: &BBox) -> String {
    format!("<bbox>{:.6},{:.6},{:.6},{:.6}</bbox>", b.x(), b.y(), b.w(), b.h())
}

pub fn render_id_line(id: TrackId, b: &BBox) -> String {
    format!("ID {id}: {}", render_bbox(b))
}

pub fn render_new_line(provisional_id: Option<TrackId>, b: &BBox) -> String {
    match provisional_id {
        Some(id) => format!("NEW: ID {id}: {}", render_bbox(b)),
        None => format!("NEW: {}", render_bbox(b)),
    }
}

type BlockKey = (Option<String>, Option<u32>);

/// Renders a response in canonical form.
///
/// Blocks are grouped by view (unviewed first) and, within a view, frameless
/// lines come before framed ones. Inside a block, ID lines precede `NEW:`
/// lines, which precede `GONE:` lines. Regions without a box are dropped.
/// `render(parse(render(p))) == render(p)` for any `p`.
pub fn render_response(p: &ParsedResponse) -> String {
    let entry_keys = p.entries.iter().filter(|e| e.bbox.is_some()).map(|e| (e.view.clone(), e.frame));
    let new_keys = p.declared_new_objects.iter().filter(|n| n.bbox.is_some()).map(|n| (n.view.clone(), n.frame));
    let gone_keys = p.declared_disappeared.iter().map(|g| (g.view.clone(), g.frame));

    let mut blocks: Vec<BlockKey> = Vec::new();
    for k in entry_keys.chain(new_keys).chain(gone_keys) {
        if !blocks.contains(&k) {
            blocks.push(k);
        }
    }
    let mut views: Vec<Option<String>> = Vec::new();
    for (v, _) in &blocks {
        if !views.contains(v) {
            views.push(v.clone());
        }
    }
    views.sort_by_key(|v| v.is_some());

    let mut lines = Vec::new();
    for v in &views {
        if let Some(name) = v {
            lines.push(format!("View {name}:"));
        }
        let mut in_view: Vec<&BlockKey> = blocks.iter().filter(|(bv, _)| bv == v).collect();
        in_view.sort_by_key(|(_, f)| f.is_some());
        for key in in_view {
            if let Some(f) = key.1 {
                lines.push(format!("Frame {f}:"));
            }
            let same = |view: &Option<String>, frame: &Option<u32>| view == &key.0 && frame == &key.1;
            for e in p.entries.iter().filter(|e| same(&e.view, &e.frame)) {
                if let Some(b) = &e.bbox {
                    lines.push(match e.object_id {
                        Some(id) => render_id_line(id, b),
                        None => render_bbox(b),
                    });
                }
            }
            for n in p.declared_new_objects.iter().filter(|n| same(&n.view, &n.frame)) {
                if let Some(b) = &n.bbox {
                    lines.push(render_new_line(n.provisional_id, b));
                }
            }
            for g in p.declared_disappeared.iter().filter(|g| same(&g.view, &g.frame)) {
                lines.push(format!("GONE: {}", g.object_id));
            }
        }
    }
    lines.join("\n")
}

/// Accumulates canonical lines block by block and renders them with
/// [`render_response`].
#[derive(Debug, Default)]
pub struct CanonicalWriter {
    parsed: ParsedResponse,
    view: Option<String>,
    frame: Option<u32>,
}

impl CanonicalWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn view(&mut self, view: Option<String>) -> &mut Self {
        self.view = view;
        self.frame = None;
        self
    }

    pub fn frame(&mut self, frame: Option<u32>) -> &mut Self {
        self.frame = frame;
        self
    }

    pub fn id(&mut self, id: TrackId, bbox: BBox) -> &mut Self {
        self.parsed.entries.push(BoxEntry {
            object_id: Some(id),
            bbox: Some(bbox),
            format_class: FormatClass::WellFormed,
            raw_span: 0..0,
            view: self.view.clone(),
            frame: self.frame,
        });
        self
    }

    pub fn new_object(&mut self, provisional_id: Option<TrackId>, bbox: BBox) -> &mut Self {
        self.parsed.declared_new_objects.push(NewObject {
            provisional_id,
            bbox: Some(bbox),
            format_class: FormatClass::WellFormed,
            raw_span: 0..0,
            view: self.view.clone(),
            frame: self.frame,
        });
        self
    }

    pub fn gone(&mut self, id: TrackId) -> &mut Self {
        self.parsed.declared_disappeared.push(Disappearance { object_id: id, view: self.view.clone(), frame: self.frame });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.parsed.entries.is_empty()
            && self.parsed.declared_new_objects.is_empty()
            && self.parsed.declared_disappeared.is_empty()
    }

    pub fn render(&self) -> String {
        render_response(&self.parsed)
    }
}
