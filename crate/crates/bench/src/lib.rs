//! Synthetic workload generators shared by the criterion benches.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use smrcheck::lang::{parse_program, Program};

/// One EBR procedure of roughly `n` commands, none of which can fail.
pub fn straight_line(n: usize) -> Program {
    let mut rng = StdRng::seed_from_u64(n as u64);
    let ptr = ["p", "q", "s", "w"];
    let mut body = vec!["@inv angel r;".to_string()];
    let mut count = 1;
    while count < n {
        let x = ptr[rng.gen_range(0..4)];
        let y = ptr[rng.gen_range(0..4)];
        let g = ["Head", "Tail"][rng.gen_range(0..2)];
        let (s, k) = match rng.gen_range(0..7) {
            0 => (format!("{x} = {g};"), 1),
            1 => (format!("{g} = {x};"), 1),
            2 => (format!("{x} = {y};"), 1),
            3 => (format!("{x} = malloc;"), 1),
            4 => ("atomic { enter leaveQ(); exit leaveQ; @inv active(r); }".to_string(), 3),
            5 => (format!("@inv {x} in r;"), 1),
            _ => ("enter enterQ(); exit enterQ;".to_string(), 2),
        };
        body.push(s);
        count += k;
    }
    let src = format!(
        "struct Node {{ data; next; }} shared Head, Tail; proc t {{ local p, q, s, w; angel r; {} }}",
        body.join(" ")
    );
    parse_program(&src).expect("generated program parses")
}

#[cfg(test)]
mod tests {
    #[test]
    fn sizes_are_close() {
        let p = super::straight_line(200);
        let n = p.procs[0].body.commands().iter().filter(|c| !c.is_atomic_marker()).count();
        assert!((200..210).contains(&n), "{n}");
    }
}
