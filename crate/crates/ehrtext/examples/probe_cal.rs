use ehrtext::data::{generate_synthetic, make_split_plan, PairedDataset, SplitCfg, SynthConfig};
use ehrtext::eval::{run_comparison, ComparisonCfg};
use ehrtext::pipeline::{run_contrastive_pretrain, run_masked_pretrain, RunConfig, RunLog, Stage};
use std::time::Instant;

fn envf(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn envu(k: &str, d: usize) -> usize { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn dataset(n: usize, seed: u64) -> PairedDataset {
    let mut scfg = SynthConfig::standard(n, seed);
    scfg.sigma = envf("SIGMA", scfg.sigma);
    scfg.topic_sharpness = envf("SHARP", scfg.topic_sharpness);
    scfg.salient_cols = envu("SALIENT", scfg.salient_cols);
    scfg.salient_coeff = envf("SCOEFF", scfg.salient_coeff);
    scfg.n_informative_num = envu("NINF", scfg.n_informative_num);
    let s = envf("TASKNORM", 0.0);
    if s > 0.0 {
        for t in &mut scfg.tasks {
            let norm = t.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
            for w in &mut t.weights { *w *= s / norm; }
            t.bias = envf("TASKBIAS", t.bias);
        }
    }
    let sh = envf("W3SH", -1.0);
    if sh >= 0.0 {
        for t in &mut scfg.tasks {
            let norm = t.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
            let k = t.weights.len();
            let lead_norm = t.weights[..k - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
            let sign = t.weights[k - 1].signum();
            for w in &mut t.weights[..k - 1] { *w *= (1.0 - sh).sqrt() / lead_norm; }
            t.weights[k - 1] = sign * sh.sqrt();
            for w in &mut t.weights { *w *= norm; }
        }
    }
    generate_synthetic(&scfg).unwrap()
}

fn criterion6(n: usize, seed: u64) {
    let ds = dataset(n, seed);
    let pool: Vec<usize> = (0..ds.len()).collect();
    let mut mk = RunConfig::for_stage(Stage::Masked, seed);
    mk.epochs = envu("MEP", 6);
    let mut cl = RunConfig::for_stage(Stage::Contrastive, seed);
    cl.epochs = envu("CEP", cl.epochs);
    cl.lr = envf("CLR", cl.lr);
    for (name, d) in [("aligned", ds.clone()), ("permuted", ds.with_permuted_pairing(seed + 1))] {
        let t0 = Instant::now();
        let mut log = RunLog::in_memory();
        let base = run_masked_pretrain(&mk, &d, &pool, &mut log).unwrap();
        let _ = run_contrastive_pretrain(&cl, &d, &pool, &base, &mut log).unwrap();
        let recs = log.for_stage("contrastive");
        let last = recs.last().unwrap();
        println!(
            "{name}: final loss {:.4} (bounds 7.9019..8.7337) recall@1 {:.3} [{:.0}s]",
            last.loss, last.metric.unwrap_or(-1.0), t0.elapsed().as_secs_f64()
        );
        for r in recs { eprintln!("  {name} ep{} loss {:.4} recall {:.3}", r.epoch, r.loss, r.metric.unwrap_or(-1.0)); }
    }
}

fn logistic_oracle(n: usize, seed: u64) {
    use ehrtext::eval::auroc;
    let ds = dataset(n, seed);
    let plan = make_split_plan(n, &SplitCfg { seed, ..SplitCfg::scaled(n, seed).unwrap() }).unwrap();
    let sub = &plan.subsets[0];
    let cols = ds.table.columns.len();
    let feat = |row: &Vec<ehrtext::tabular::Cell>| -> Vec<f64> {
        let mut v = Vec::new();
        for c in 0..cols {
            let s = row[c].as_str().unwrap();
            if let Ok(x) = s.parse::<f64>() {
                v.push(x);
            } else {
                for b in 0..6 { v.push(if s == ((b'a' + b) as char).to_string() { 1.0 } else { 0.0 }); }
            }
        }
        v
    };
    let xs: Vec<Vec<f64>> = ds.table.rows.iter().map(feat).collect();
    let d = xs[0].len();
    for task in ds.task_names() {
        let ys = ds.labels_for(task).unwrap();
        let mut w = vec![0.0; d + 1];
        for it in 0..3000 {
            let lr = if it < 1500 { 0.5 } else { 0.1 };
            let mut g = vec![0.0; d + 1];
            for &i in &sub.train {
                let z: f64 = w[d] + (0..d).map(|j| w[j] * xs[i][j]).sum::<f64>();
                let p = 1.0 / (1.0 + (-z).exp());
                let e = p - if ys[i] { 1.0 } else { 0.0 };
                for j in 0..d { g[j] += e * xs[i][j]; }
                g[d] += e;
            }
            let m = sub.train.len() as f64;
            for j in 0..=d { w[j] -= lr * (g[j] / m + 1e-4 * w[j]); }
        }
        let scores: Vec<f64> = sub.test.iter().map(|&i| w[d] + (0..d).map(|j| w[j] * xs[i][j]).sum::<f64>()).collect();
        let labels: Vec<bool> = sub.test.iter().map(|&i| ys[i]).collect();
        println!("oracle {}: test AUC {:.4} (train {} rows)", task, auroc(&scores, &labels).unwrap(), sub.train.len());
    }
}

fn main() {
    let n = envu("N", 5000);
    let seed = envu("SEED", 0) as u64;
    if envu("M6", 0) == 1 {
        criterion6(envu("N6", 2100), seed);
        return;
    }
    if envu("ORACLE", 0) == 1 {
        logistic_oracle(n, seed);
        return;
    }
    let ds = dataset(n, seed);
    let plan = make_split_plan(n, &SplitCfg { seed, ..SplitCfg::scaled(n, seed).unwrap() }).unwrap();

    let mut cfg = ComparisonCfg::standard(seed);
    cfg.masked.epochs = envu("MEP", cfg.masked.epochs);
    cfg.contrastive.epochs = envu("CEP", cfg.contrastive.epochs);
    cfg.contrastive.lr = envf("CLR", cfg.contrastive.lr);
    cfg.finetune.epochs = envu("FEP", cfg.finetune.epochs);
    cfg.finetune.lr = envf("FLR", cfg.finetune.lr);

    let t0 = Instant::now();
    let mut log = RunLog::in_memory();
    let report = run_comparison(&cfg, &ds, &plan, &mut log).unwrap();
    eprintln!("comparison: {:.1}s", t0.elapsed().as_secs_f64());

    for r in log.for_stage("masked") { eprintln!("masked ep{} loss {:.4}", r.epoch, r.loss); }
    for r in log.for_stage("contrastive") {
        eprintln!("cl ep{} loss {:.4} recall@1 {:.3}", r.epoch, r.loss, r.metric.unwrap_or(-1.0));
    }
    println!("{}", report.to_text());
    for t in &report.tests {
        let cl = report.rows.iter().find(|r| r.task == t.task && r.variant == "cl-init" && r.fraction == t.fraction).unwrap();
        let mk = report.rows.iter().find(|r| r.task == t.task && r.variant == "masked-init" && r.fraction == t.fraction).unwrap();
        let wins = cl.aucs.iter().zip(&mk.aucs).filter(|(a, b)| a > b).count();
        println!("{} f={}: wins {}/5 mean_diff {:+.4} p {:.4}", t.task, t.fraction, wins, cl.mean - mk.mean, t.p);
    }
}
