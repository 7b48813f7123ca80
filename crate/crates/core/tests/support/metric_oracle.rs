//! Straightforward reference formulas for the text metrics, on
//! whitespace-separated tokens with one reference per candidate.

use std::collections::HashMap;

fn grams(toks: &[&str], n: usize) -> Vec<String> {
    if toks.len() < n {
        return Vec::new();
    }
    (0..=toks.len() - n).map(|i| toks[i..i + n].join("\u{1}")).collect()
}

/// Unsmoothed corpus BLEU with uniform weights.
pub fn bleu(pairs: &[(&str, &str)], max_n: usize) -> f64 {
    let mut log_sum = 0.0;
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for n in 1..=max_n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in pairs {
            let ct: Vec<&str> = c.split_whitespace().collect();
            let rt: Vec<&str> = r.split_whitespace().collect();
            let cg = grams(&ct, n);
            let mut budget: HashMap<String, usize> = HashMap::new();
            for g in grams(&rt, n) {
                *budget.entry(g).or_default() += 1;
            }
            for g in cg.iter() {
                if let Some(b) = budget.get_mut(g) {
                    if *b > 0 {
                        *b -= 1;
                        matched += 1;
                    }
                }
            }
            total += cg.len();
            if n == 1 {
                c_len += ct.len();
                r_len += rt.len();
            }
        }
        if matched == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln() / max_n as f64;
    }
    let bp = if c_len >= r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    bp * log_sum.exp()
}

/// LCS length by plain recursion with memoization over suffixes.
pub fn lcs(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Mean sentence-level ROUGE-L F1.
pub fn rouge_l(pairs: &[(&str, &str)]) -> f64 {
    let mut total = 0.0;
    for (c, r) in pairs {
        let ct: Vec<&str> = c.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        let l = lcs(&ct, &rt) as f64;
        if l > 0.0 {
            let (p, rc) = (l / ct.len() as f64, l / rt.len() as f64);
            total += 2.0 * p * rc / (p + rc);
        }
    }
    total / pairs.len() as f64
}

pub fn distinct(cands: &[&str], n: usize) -> f64 {
    let all: Vec<String> = cands
        .iter()
        .flat_map(|c| grams(&c.split_whitespace().collect::<Vec<_>>(), n))
        .collect();
    let uniq: std::collections::HashSet<&String> = all.iter().collect();
    uniq.len() as f64 / all.len() as f64
}

/// Fleiss' kappa from category proportions and per-item agreement.
pub fn kappa(rows: &[Vec<&str>]) -> f64 {
    let n = rows[0].len() as f64;
    let items = rows.len() as f64;
    let mut cats: Vec<&str> = rows.iter().flatten().copied().collect();
    cats.sort();
    cats.dedup();
    let mut p_j = vec![0.0; cats.len()];
    let mut p_i_sum = 0.0;
    for row in rows {
        let mut s = 0.0;
        for (j, c) in cats.iter().enumerate() {
            let k = row.iter().filter(|x| *x == c).count() as f64;
            p_j[j] += k / (items * n);
            s += k * k;
        }
        p_i_sum += (s - n) / (n * (n - 1.0));
    }
    let p_bar = p_i_sum / items;
    let p_e: f64 = p_j.iter().map(|p| p * p).sum();
    (p_bar - p_e) / (1.0 - p_e)
}
