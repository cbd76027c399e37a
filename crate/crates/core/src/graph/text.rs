//! Line-oriented text format (`.mg` files).
//!
//! ```text
//! %0 = f32[2,2] parameter()
//! %1 = f32[2,2] constant(), literal={1.0,0.0,0.0,1.0}
//! %2 = f32[2,2] dot(%0, %1)
//! %3 = f32[2,2] transpose(%2), perm={1,0}
//! ROOT %3
//! ```
//!
//! Blank lines and `#` comments are ignored. Parsing renumbers node ids to
//! their line positions.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{expected_shape, Attrs, Graph, Node, NodeId, OpKind, TensorShape};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn write_list<T: std::fmt::Display>(out: &mut String, items: &[T]) {
    out.push('{');
    for (i, x) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{x}");
    }
    out.push('}');
}

pub fn emit_text(graph: &Graph) -> String {
    let mut out = String::new();
    for node in &graph.nodes {
        let _ = write!(out, "{} = {} {}(", node.id, node.shape, node.kind);
        for (i, o) in node.operands.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{o}");
        }
        out.push(')');
        match &node.attrs {
            Attrs::None => {}
            Attrs::Literal(v) => {
                out.push_str(", literal=");
                // Debug formatting is the shortest representation that round-trips.
                out.push('{');
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{x:?}");
                }
                out.push('}');
            }
            Attrs::Perm(v) => {
                out.push_str(", perm=");
                write_list(&mut out, v);
            }
            Attrs::BroadcastDims(v) => {
                out.push_str(", dims=");
                write_list(&mut out, v);
            }
            Attrs::ReduceDims(v) => {
                out.push_str(", reduce=");
                write_list(&mut out, v);
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "ROOT {}", graph.root);
    out
}

struct LineParser<'a> {
    line: usize,
    rest: &'a str,
}

impl<'a> LineParser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: self.line,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn eat(&mut self, tok: &str) -> Result<(), ParseError> {
        self.skip_ws();
        match self.rest.strip_prefix(tok) {
            Some(r) => {
                self.rest = r;
                Ok(())
            }
            None => self.err(format!("expected `{tok}` at `{}`", self.rest)),
        }
    }

    fn try_eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        match self.rest.strip_prefix(tok) {
            Some(r) => {
                self.rest = r;
                true
            }
            None => false,
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        self.skip_ws();
        let end = self.rest.find(|c: char| !f(c)).unwrap_or(self.rest.len());
        let (head, tail) = self.rest.split_at(end);
        self.rest = tail;
        head
    }

    fn number<T: std::str::FromStr>(&mut self) -> Result<T, ParseError> {
        let tok = self.take_while(|c| c.is_ascii_digit());
        match tok.parse() {
            Ok(v) => Ok(v),
            Err(_) => self.err(format!("expected integer at `{}`", self.rest)),
        }
    }

    fn node_ref(&mut self) -> Result<usize, ParseError> {
        self.eat("%")?;
        self.number()
    }

    fn usize_list(&mut self) -> Result<Vec<usize>, ParseError> {
        self.eat("{")?;
        let mut v = Vec::new();
        if self.try_eat("}") {
            return Ok(v);
        }
        loop {
            v.push(self.number()?);
            if self.try_eat("}") {
                return Ok(v);
            }
            self.eat(",")?;
        }
    }

    fn float_list(&mut self) -> Result<Vec<f64>, ParseError> {
        self.eat("{")?;
        let mut v = Vec::new();
        if self.try_eat("}") {
            return Ok(v);
        }
        loop {
            let tok = self.take_while(|c| c != ',' && c != '}' && !c.is_whitespace());
            match tok.parse::<f64>() {
                Ok(x) => v.push(x),
                Err(_) => return self.err(format!("bad literal value `{tok}`")),
            }
            if self.try_eat("}") {
                return Ok(v);
            }
            self.eat(",")?;
        }
    }

    fn shape(&mut self) -> Result<TensorShape, ParseError> {
        self.eat("f32[")?;
        let mut dims = Vec::new();
        if !self.try_eat("]") {
            loop {
                let d: usize = self.number()?;
                if d == 0 {
                    return self.err("dimensions must be positive");
                }
                dims.push(d);
                if self.try_eat("]") {
                    break;
                }
                self.eat(",")?;
            }
        }
        Ok(TensorShape::new(dims))
    }

    fn done(&mut self) -> Result<(), ParseError> {
        self.skip_ws();
        if self.rest.is_empty() {
            Ok(())
        } else {
            self.err(format!("unexpected trailing text `{}`", self.rest))
        }
    }
}

/// Parses the text format. The returned graph has an empty name and ids
/// renumbered to positions.
pub fn parse_text(text: &str) -> Result<Graph, ParseError> {
    let mut nodes: Vec<Node> = Vec::new();
    let mut ids: HashMap<usize, NodeId> = HashMap::new();
    let mut root: Option<NodeId> = None;
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut p = LineParser {
            line: line_no,
            rest: content,
        };
        if root.is_some() {
            return p.err("content after ROOT");
        }
        if p.try_eat("ROOT") {
            let r = p.node_ref()?;
            p.done()?;
            match ids.get(&r) {
                Some(&id) => root = Some(id),
                None => return p.err(format!("ROOT refers to unknown node %{r}")),
            }
            continue;
        }

        let text_id = p.node_ref()?;
        if ids.contains_key(&text_id) {
            return p.err(format!("duplicate node %{text_id}"));
        }
        p.eat("=")?;
        let shape = p.shape()?;
        let mnemonic = p.take_while(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        let Some(kind) = OpKind::from_mnemonic(mnemonic) else {
            return p.err(format!("unknown op `{mnemonic}`"));
        };
        p.eat("(")?;
        let mut operands = Vec::new();
        if !p.try_eat(")") {
            loop {
                let r = p.node_ref()?;
                match ids.get(&r) {
                    Some(&id) => operands.push(id),
                    None => return p.err(format!("operand %{r} is not defined before use")),
                }
                if p.try_eat(")") {
                    break;
                }
                p.eat(",")?;
            }
        }
        let mut attrs = Attrs::None;
        while p.try_eat(",") {
            let key = p.take_while(|c| c.is_ascii_alphabetic());
            p.eat("=")?;
            if !matches!(attrs, Attrs::None) {
                return p.err("more than one attribute");
            }
            attrs = match key {
                "literal" => Attrs::Literal(p.float_list()?),
                "perm" => Attrs::Perm(p.usize_list()?),
                "dims" => Attrs::BroadcastDims(p.usize_list()?),
                "reduce" => Attrs::ReduceDims(p.usize_list()?),
                other => return p.err(format!("unknown attribute `{other}`")),
            };
        }
        p.done()?;

        if operands.len() != kind.arity() {
            return p.err(format!(
                "arity error: {kind} takes {} operands, got {}",
                kind.arity(),
                operands.len()
            ));
        }
        let operand_shapes: Vec<&TensorShape> = operands.iter().map(|o| &nodes[o.0].shape).collect();
        match expected_shape(kind, &operand_shapes, &attrs, &shape) {
            Ok(s) if s == shape => {}
            Ok(s) => return p.err(format!("shape error: declared {shape}, expected {s}")),
            Err(e) => return p.err(format!("shape error: {e}")),
        }
        let id = NodeId(nodes.len());
        ids.insert(text_id, id);
        nodes.push(Node {
            id,
            kind,
            operands,
            shape,
            attrs,
        });
    }

    match root {
        Some(root) => Ok(Graph::new("", nodes, root)),
        None => Err(ParseError {
            line: last_line + 1,
            message: "missing ROOT line".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "%0 = f32[2,2] parameter()\n%1 = f32[2,2] add(%0, %0)\nROOT %1\n";

    #[test]
    fn parses_minimal_graph() {
        let g = parse_text(MINIMAL).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.nodes[1].kind, OpKind::Add);
        assert_eq!(g.root, NodeId(1));
        assert!(crate::graph::validate(&g).is_empty());
    }

    #[test]
    fn canonical_text_round_trips() {
        let t = "%0 = f32[2,3] parameter()\n\
                 %1 = f32[3,2] transpose(%0), perm={1,0}\n\
                 %2 = f32[3] constant(), literal={1.0,-0.5,1e-300}\n\
                 %3 = f32[3,2] broadcast(%2), dims={0}\n\
                 %4 = f32[3,2] add(%1, %3)\n\
                 %5 = f32[3] reduce-sum(%4), reduce={1}\n\
                 %6 = f32[1,3] reshape(%5)\n\
                 %7 = f32[] constant(), literal={NaN}\n\
                 ROOT %6\n";
        assert_eq!(emit_text(&parse_text(t).unwrap()), t);
    }

    #[test]
    fn arity_error_names_the_line() {
        let t = "%0 = f32[2] parameter()\n%1 = f32[2] add(%0)\nROOT %1\n";
        let e = parse_text(t).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("arity"), "{e}");
    }

    #[test]
    fn shape_error_names_the_line() {
        let t = "%0 = f32[2] parameter()\n# comment\n\n%1 = f32[3] negate(%0)\nROOT %1\n";
        let e = parse_text(t).unwrap_err();
        assert_eq!(e.line, 4);
        assert!(e.message.contains("shape"));
    }

    #[test]
    fn forward_reference_and_missing_root_rejected() {
        let e = parse_text("%0 = f32[2] negate(%1)\n%1 = f32[2] parameter()\nROOT %0").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse_text("%0 = f32[2] parameter()\n").unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn ids_are_renumbered() {
        let t = "%10 = f32[2] parameter()\n%42 = f32[2] exp(%10)\nROOT %42\n";
        let g = parse_text(t).unwrap();
        assert_eq!(g.root, NodeId(1));
        assert_eq!(g.nodes[1].operands, vec![NodeId(0)]);
    }
}
