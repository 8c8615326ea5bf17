//! Seeded random programs in the mini-language, used to drive the dataflow
//! oracle comparison and the prefix-masking checks.

use cgfuse::tensor::Rng;

const NAMES: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];
const EXTERNALS: [&str; 3] = ["helper", "clamp", "obj"];

fn pick<'a>(rng: &mut Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.below(pool.len() as u64) as usize]
}

struct Gen {
    rng: Rng,
    out: Vec<String>,
    // Declared names per block depth; assignments may also target undeclared
    // names, which the analysis binds at the root scope.
    scopes: Vec<Vec<String>>,
}

impl Gen {
    fn declared(&self) -> Vec<&str> {
        self.scopes.iter().flatten().map(String::as_str).collect()
    }

    fn atom(&mut self) -> String {
        let vars = self.declared();
        match self.rng.below(10) {
            0 => self.rng.below(100).to_string(),
            // Rare undeclared read: stays unresolved, must produce no edge.
            1 => pick(&mut self.rng, &EXTERNALS).to_string(),
            _ if !vars.is_empty() => pick(&mut self.rng, &vars).to_string(),
            _ => self.rng.below(100).to_string(),
        }
    }

    fn expr(&mut self) -> String {
        match self.rng.below(8) {
            0 => {
                let f = pick(&mut self.rng, &EXTERNALS).to_string();
                let a = self.atom();
                let b = self.atom();
                format!("{f} ( {a} , {b} )")
            }
            1 => {
                let base = pick(&mut self.rng, &EXTERNALS).to_string();
                format!("{base} . size")
            }
            2..=4 => {
                let a = self.atom();
                let op = pick(&mut self.rng, &["+", "-", "*"]);
                let b = self.atom();
                format!("{a} {op} {b}")
            }
            _ => self.atom(),
        }
    }

    fn fresh_or_shadow(&mut self) -> String {
        pick(&mut self.rng, &NAMES).to_string()
    }

    fn target(&mut self) -> String {
        let vars = self.declared();
        if vars.is_empty() || self.rng.below(6) == 0 {
            // Undeclared target: the analysis binds it at the root scope.
            pick(&mut self.rng, &NAMES).to_string()
        } else {
            pick(&mut self.rng, &vars).to_string()
        }
    }

    fn cond(&mut self) -> String {
        let a = self.atom();
        let b = self.atom();
        format!("( {a} < {b} )")
    }

    fn stmt(&mut self, depth: usize, budget: &mut usize) {
        if *budget == 0 {
            return;
        }
        *budget -= 1;
        let roll = self.rng.below(if depth == 0 { 10 } else { 8 });
        match roll {
            0 | 1 => {
                let name = self.fresh_or_shadow();
                if self.rng.below(8) == 0 {
                    self.out.push(format!("int {name} ;"));
                } else {
                    let e = self.expr();
                    self.out.push(format!("int {name} = {e} ;"));
                }
                self.scopes.last_mut().unwrap().push(name);
            }
            2..=4 => {
                let t = self.target();
                let e = self.expr();
                self.out.push(format!("{t} = {e} ;"));
            }
            5 => {
                let e = self.expr();
                self.out.push(format!("{e} ;"));
            }
            6 | 7 if depth < 2 => {
                let kw = if roll == 6 { "if" } else { "while" };
                let c = self.cond();
                self.out.push(format!("{kw} {c} {{"));
                self.block(depth + 1, budget);
                self.out.push("}".into());
                if kw == "if" && self.rng.below(2) == 0 {
                    self.out.push("else {".into());
                    self.block(depth + 1, budget);
                    self.out.push("}".into());
                }
            }
            _ => {
                let t = self.target();
                let e = self.expr();
                self.out.push(format!("{t} = {e} ;"));
            }
        }
    }

    fn block(&mut self, depth: usize, budget: &mut usize) {
        self.scopes.push(Vec::new());
        let n = 1 + self.rng.below(3);
        for _ in 0..n {
            self.stmt(depth, budget);
        }
        self.scopes.pop();
    }
}

/// A random program with declarations, assignments, branches, loops, calls
/// and field reads. Same seed, same program.
pub fn random_program(seed: u64) -> String {
    let mut g = Gen {
        rng: Rng::seeded(seed, "test.program"),
        out: Vec::new(),
        scopes: vec![Vec::new()],
    };
    let mut budget = 3 + g.rng.below(8) as usize;
    while budget > 0 {
        g.stmt(0, &mut budget);
    }
    let vars = g.declared();
    let ret = if vars.is_empty() { "0".to_string() } else { pick(&mut g.rng, &vars).to_string() };
    g.out.push(format!("return {ret} ;"));
    g.out.join(" ")
}

/// Straight-line subset: declarations, assignments and a return, no control
/// flow, so a token prefix is always a truncation of one statement list.
pub fn straight_line_program(seed: u64) -> String {
    let mut g = Gen {
        rng: Rng::seeded(seed, "test.straightline"),
        out: Vec::new(),
        scopes: vec![Vec::new()],
    };
    let n = 2 + g.rng.below(5);
    for i in 0..n {
        let vars = g.declared();
        if vars.is_empty() || i < 2 || g.rng.below(3) == 0 {
            let name = g.fresh_or_shadow();
            let e = g.expr();
            g.out.push(format!("int {name} = {e} ;"));
            g.scopes.last_mut().unwrap().push(name);
        } else {
            let t = pick(&mut g.rng, &vars).to_string();
            let e = g.expr();
            g.out.push(format!("{t} = {e} ;"));
        }
    }
    let vars = g.declared();
    let ret = pick(&mut g.rng, &vars).to_string();
    g.out.push(format!("return {ret} ;"));
    g.out.join(" ")
}
