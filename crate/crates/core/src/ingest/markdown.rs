//! Line-oriented Markdown outline reader.
//!
//! Only headings and blank-line separated blocks matter: a line starting
//! with one or more `#` followed by a space (or nothing) is a heading whose
//! depth is the number of `#`; every other non-blank run of lines is one
//! paragraph, its lines joined with single spaces.

use crate::discourse::{Document, OutlineNode};

pub const PREAMBLE_SECTION: &str = "(preamble)";
pub const UNTITLED_SECTION: &str = "(untitled)";

fn heading(line: &str) -> Option<(usize, &str)> {
    let trimmed = line.trim_start();
    let depth = trimmed.chars().take_while(|&c| c == '#').count();
    if depth == 0 {
        return None;
    }
    let rest = &trimmed[depth..];
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let name = rest.trim().trim_end_matches('#').trim();
    Some((depth, if name.is_empty() { UNTITLED_SECTION } else { name }))
}

struct Open {
    depth: usize,
    node: OutlineNode,
}

/// Parses Markdown text into a document. Heading depth jumps are tolerated:
/// a heading nests under the nearest shallower open heading. Text before the
/// first heading goes to a root section named `(preamble)`.
pub fn parse_markdown_document(text: &str, doc_id: &str) -> Document {
    let mut roots: Vec<OutlineNode> = Vec::new();
    let mut stack: Vec<Open> = Vec::new();
    let mut block: Vec<&str> = Vec::new();

    fn flush(block: &mut Vec<&str>, stack: &mut Vec<Open>) {
        if block.is_empty() {
            return;
        }
        let para = block.iter().map(|l| l.trim()).collect::<Vec<_>>().join(" ");
        block.clear();
        if stack.is_empty() {
            stack.push(Open {
                depth: 0,
                node: OutlineNode::new(PREAMBLE_SECTION, vec![]),
            });
        }
        stack.last_mut().unwrap().node.paragraphs.push(para);
    }

    fn close_to(depth: usize, stack: &mut Vec<Open>, roots: &mut Vec<OutlineNode>) {
        while stack.last().is_some_and(|o| o.depth >= depth) {
            let done = stack.pop().unwrap().node;
            match stack.last_mut() {
                Some(parent) => parent.node.children.push(done),
                None => roots.push(done),
            }
        }
    }

    for line in text.lines() {
        if let Some((depth, name)) = heading(line) {
            flush(&mut block, &mut stack);
            if stack.first().is_some_and(|o| o.depth == 0) {
                // the preamble is a root of its own, never a parent
                close_to(0, &mut stack, &mut roots);
            }
            close_to(depth, &mut stack, &mut roots);
            stack.push(Open {
                depth,
                node: OutlineNode::new(name, vec![]),
            });
        } else if line.trim().is_empty() {
            flush(&mut block, &mut stack);
        } else {
            block.push(line);
        }
    }
    flush(&mut block, &mut stack);
    close_to(0, &mut stack, &mut roots);

    let title = roots
        .iter()
        .find(|r| r.name != PREAMBLE_SECTION)
        .map(|r| r.name.clone())
        .unwrap_or_default();
    Document::from_outline(doc_id, &title, roots)
}

/// Writes a document back as Markdown with depth-accurate headings.
pub fn to_markdown(doc: &Document) -> String {
    fn emit(node: &crate::discourse::SectionNode, depth: usize, out: &mut Vec<String>) {
        out.push(format!("{} {}", "#".repeat(depth), node.name));
        for p in &node.paragraphs {
            out.push(p.text.clone());
        }
        for c in &node.children {
            emit(c, depth + 1, out);
        }
    }
    let mut blocks = Vec::new();
    for r in &doc.roots {
        emit(r, 1, &mut blocks);
    }
    let mut s = blocks.join("\n\n");
    if !s.is_empty() {
        s.push('\n');
    }
    s
}
