//! Reader and writer for the legacy `opencv-haar-classifier` XML layout:
//!
//! ```text
//! <opencv_storage>
//!   <name type_id="opencv-haar-classifier">
//!     <size>24 24</size>
//!     <stages>
//!       <_>
//!         <trees>
//!           <_>
//!             <_>
//!               <feature><rects><_>0 0 24 12 1.</_>...</rects><tilted>0</tilted></feature>
//!               <threshold>..</threshold><left_val>..</left_val><right_val>..</right_val>
//!             </_>
//!           </_>
//!         </trees>
//!         <stage_threshold>..</stage_threshold>
//!       </_>
//!     </stages>
//!   </name>
//! </opencv_storage>
//! ```
//!
//! Only single-node trees (stumps) over upright rectangles are accepted.

use std::fmt::Write as _;
use std::path::Path;

use roxmltree::{Document, Node};

use crate::error::{Error, Result};
use crate::haar::cascade::{Cascade, CascadeStage, HaarFeature, HaarRect, Stump};

const ZERO_SUM_TOLERANCE: f64 = 1e-3;

fn err(msg: impl Into<String>) -> Error {
    Error::Import(msg.into())
}

fn elements<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|n| n.is_element())
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str, ctx: &str) -> Result<Node<'a, 'i>> {
    elements(node)
        .find(|n| n.has_tag_name(name))
        .ok_or_else(|| err(format!("{ctx}: missing <{name}> element")))
}

fn text<'a>(node: Node<'a, '_>) -> &'a str {
    node.text().unwrap_or("").trim()
}

fn number(node: Node, ctx: &str) -> Result<f64> {
    let t = text(node);
    t.parse::<f64>()
        .map_err(|_| err(format!("{ctx}: <{}> is not a number: {t:?}", node.tag_name().name())))
}

fn whole(v: &str, ctx: &str) -> Result<usize> {
    let f: f64 = v
        .parse()
        .map_err(|_| err(format!("{ctx}: {v:?} is not a number")))?;
    if f < 0.0 || f.fract() != 0.0 {
        return Err(err(format!("{ctx}: {v:?} is not a non-negative integer")));
    }
    Ok(f as usize)
}

pub fn load_cascade(path: &Path) -> Result<Cascade> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    import_cascade(&text).map_err(|e| match e {
        Error::Import(m) => Error::Import(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn import_cascade(xml_text: &str) -> Result<Cascade> {
    let doc = Document::parse(xml_text).map_err(|e| err(format!("malformed XML: {e}")))?;
    let root = doc.root_element();
    let cascade_node = if elements(root).any(|n| n.has_tag_name("size")) {
        root
    } else {
        elements(root)
            .find(|n| elements(*n).any(|c| c.has_tag_name("size")))
            .ok_or_else(|| err("missing <size> element"))?
    };

    let size = child(cascade_node, "size", "cascade")?;
    let dims: Vec<&str> = text(size).split_whitespace().collect();
    let (base_w, base_h) = match dims[..] {
        [w, h] => (whole(w, "<size>")?, whole(h, "<size>")?),
        _ => return Err(err(format!("<size> must hold \"W H\", got {:?}", text(size)))),
    };

    let stages_node = child(cascade_node, "stages", "cascade")?;
    let mut stages = Vec::new();
    for (si, stage_node) in elements(stages_node).enumerate() {
        let sctx = format!("stage {si}");
        let trees = child(stage_node, "trees", &sctx)?;
        let mut stumps = Vec::new();
        for (ti, tree) in elements(trees).enumerate() {
            let tctx = format!("stage {si} tree {ti}");
            stumps.push(parse_tree(tree, base_w, base_h, &tctx)?);
        }
        if stumps.is_empty() {
            return Err(err(format!("{sctx}: <trees> is empty")));
        }
        let threshold = number(child(stage_node, "stage_threshold", &sctx)?, &sctx)?;
        stages.push(CascadeStage { stumps, threshold });
    }
    if stages.is_empty() {
        return Err(err("<stages> is empty"));
    }
    Cascade::new(base_w, base_h, stages).map_err(|e| err(e.to_string()))
}

fn parse_tree(tree: Node, base_w: usize, base_h: usize, ctx: &str) -> Result<Stump> {
    let nodes: Vec<Node> = elements(tree).collect();
    let node = match nodes[..] {
        [n] => n,
        _ => {
            return Err(err(format!(
                "{ctx}: expected a single-node tree, found {} nodes",
                nodes.len()
            )))
        }
    };
    if elements(node).any(|n| n.has_tag_name("left_node") || n.has_tag_name("right_node")) {
        return Err(err(format!("{ctx}: branching trees are not supported")));
    }
    let feature_node = child(node, "feature", ctx)?;
    if let Some(tilted) = elements(feature_node).find(|n| n.has_tag_name("tilted")) {
        if text(tilted) != "0" {
            return Err(err(format!("{ctx}: tilted features are not supported")));
        }
    }
    let rects_node = child(feature_node, "rects", ctx)?;
    let mut rects = Vec::new();
    for (ri, r) in elements(rects_node).enumerate() {
        let rctx = format!("{ctx} rect {ri}");
        let parts: Vec<&str> = text(r).split_whitespace().collect();
        let rect = match parts[..] {
            [x, y, w, h, weight] => HaarRect {
                x: whole(x, &rctx)?,
                y: whole(y, &rctx)?,
                w: whole(w, &rctx)?,
                h: whole(h, &rctx)?,
                weight: weight
                    .parse()
                    .map_err(|_| err(format!("{rctx}: bad weight {weight:?}")))?,
            },
            _ => return Err(err(format!("{rctx}: expected \"x y w h weight\", got {:?}", text(r)))),
        };
        if rect.w == 0 || rect.h == 0 || rect.x + rect.w > base_w || rect.y + rect.h > base_h {
            return Err(err(format!(
                "{rctx}: {:?} lies outside the {base_w}x{base_h} window",
                text(r)
            )));
        }
        rects.push(rect);
    }
    let feature = HaarFeature { rects };
    let area = feature.weighted_area();
    if area.abs() > ZERO_SUM_TOLERANCE {
        log::warn!("{ctx}: feature weighted area {area} is not zero");
    }
    Ok(Stump {
        feature,
        threshold: number(child(node, "threshold", ctx)?, ctx)?,
        left_value: number(child(node, "left_val", ctx)?, ctx)?,
        right_value: number(child(node, "right_val", ctx)?, ctx)?,
    })
}

/// Renders a cascade in the same legacy layout accepted by [`import_cascade`].
pub fn export_cascade(cascade: &Cascade, name: &str) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\"?>\n<opencv_storage>\n");
    let _ = writeln!(s, "<{name} type_id=\"opencv-haar-classifier\">");
    let _ = writeln!(s, "  <size>{} {}</size>", cascade.base_width(), cascade.base_height());
    s.push_str("  <stages>\n");
    for stage in cascade.stages() {
        s.push_str("    <_>\n      <trees>\n");
        for stump in &stage.stumps {
            s.push_str("        <_>\n          <_>\n            <feature>\n              <rects>\n");
            for r in &stump.feature.rects {
                let _ = writeln!(
                    s,
                    "                <_>{} {} {} {} {:?}</_>",
                    r.x, r.y, r.w, r.h, r.weight
                );
            }
            s.push_str("              </rects>\n              <tilted>0</tilted>\n            </feature>\n");
            let _ = writeln!(s, "            <threshold>{:?}</threshold>", stump.threshold);
            let _ = writeln!(s, "            <left_val>{:?}</left_val>", stump.left_value);
            let _ = writeln!(s, "            <right_val>{:?}</right_val>", stump.right_value);
            s.push_str("          </_>\n        </_>\n");
        }
        s.push_str("      </trees>\n");
        let _ = writeln!(s, "      <stage_threshold>{:?}</stage_threshold>", stage.threshold);
        s.push_str("      <parent>-1</parent>\n      <next>-1</next>\n    </_>\n");
    }
    s.push_str("  </stages>\n");
    let _ = writeln!(s, "</{name}>");
    s.push_str("</opencv_storage>\n");
    s
}
