//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p surgnet-core --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surgnet_core::metrics::{
    betweenness_centrality, closeness_centrality, clustering_coefficient, compute_all, degree_centrality,
    eigenvector_centrality, MetricsConfig,
};
use surgnet_core::netbuild::{build_bipartite, project_one_mode, CoworkerGraph};
use surgnet_core::outcomes::{count_complications, match_complication, ComplicationCodeset};
use surgnet_core::pipeline::{self, PipelineConfig, SynthConfig};
use surgnet_core::records::{CaseRecord, Gender, Segment};
use surgnet_core::stats::{
    lr_test_alpha, negbin_fit_from, negbin_gradient_hessian, negbin_loglik, poisson_fit, poisson_gof,
    poisson_gradient_hessian, poisson_loglik, spearman, DesignMatrix, FitOptions,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))?;
    Ok(t)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c1_centrality_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut graphs: Vec<common::Dense> = (0..10_000).map(|_| common::random_dense(&mut rng, 7)).collect();
    for n in 1..=7 {
        graphs.extend([common::star(n), common::path(n), common::complete(n)]);
    }
    graphs.push(common::kite());
    let (mut worst, mut worst_eigen) = (0.0f64, 0.0f64);
    for g in &graphs {
        let cg = g.to_graph();
        let deg: Vec<f64> = degree_centrality(&cg).into_iter().map(|d| d.1).collect();
        for (got, want) in [
            (betweenness_centrality(&cg), common::betweenness(g)),
            (closeness_centrality(&cg), common::closeness(g)),
            (clustering_coefficient(&cg), common::clustering(g)),
            (deg, common::degree(g)),
        ] {
            worst = worst.max(max_diff(&got, &want));
        }
        let eig = eigenvector_centrality(&cg, 1e-10, 10_000).map_err(|e| e.to_string())?;
        worst_eigen = worst_eigen.max(max_diff(&eig, &common::eigenvector(g)));
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e} > 1e-12"))?;
    ensure(worst_eigen <= 1e-8, || {
        format!("eigenvector max deviation {worst_eigen:e} > 1e-8")
    })?;
    let t = within_time(start, Duration::from_secs(60))?;
    Ok(format!(
        "{} graphs; max dev {worst:.1e}, eigenvector {worst_eigen:.1e}; {t:.2?}",
        graphs.len()
    ))
}

fn random_segment<R: Rng>(rng: &mut R) -> Segment {
    let pool: Vec<String> = (0..rng.random_range(2..40)).map(|p| format!("p{p:02}")).collect();
    let cases = (0..rng.random_range(1..30))
        .map(|i| {
            let k = rng.random_range(1..=pool.len().min(8));
            CaseRecord {
                case_id: format!("c{i:02}"),
                day_offset: Some(i),
                end_day_offset: Some(i + 1),
                providers: pool.choose_multiple(rng, k).cloned().collect(),
                age: 50,
                gender: Gender::Male,
                surgery_type: 1,
                dx_codes: vec![],
            }
        })
        .collect::<Vec<_>>();
    Segment {
        index: 1,
        start_day: 0,
        end_day_exclusive: cases.len() as u32,
        cases,
    }
}

fn c2_projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in 0..1000 {
        let seg = random_segment(&mut rng);
        let g = project_one_mode(&build_bipartite(&seg));
        let mut union = BTreeSet::new();
        for c in &seg.cases {
            let team: Vec<&String> = c.providers.iter().collect();
            for i in 0..team.len() {
                for j in i + 1..team.len() {
                    let (u, v) = (g.node_index(team[i]), g.node_index(team[j]));
                    ensure(matches!((u, v), (Some(u), Some(v)) if g.has_edge(u, v)), || {
                        format!("segment {s}: case {} team is not a clique", c.case_id)
                    })?;
                    union.insert((team[i].clone(), team[j].clone()));
                }
            }
        }
        ensure(g.edge_count() == union.len(), || {
            format!(
                "segment {s}: {} edges, union of cliques has {}",
                g.edge_count(),
                union.len()
            )
        })?;
    }
    Ok("1000 segments: cliques present, edge count equals clique union".into())
}

fn c3_spearman() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for _ in 0..1000 {
        let n = rng.random_range(3..=50);
        let levels = rng.random_range(2..12);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let got = spearman(&x, &y).map_err(|e| e.to_string())?.map(|r| r.0);
        match (got, common::spearman(&x, &y)) {
            (Some(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                compared += 1;
            }
            (None, None) => {}
            (a, b) => return Err(format!("defined-ness differs: {a:?} vs {b:?}")),
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e} > 1e-12"))?;
    for n in 3..=50 {
        let mut x: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 - 7.0).collect();
        x.shuffle(&mut rng);
        let up: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let down: Vec<f64> = x.iter().map(|v| -v * v * v).collect();
        let (a, b) = (
            spearman(&x, &up).unwrap().unwrap().0,
            spearman(&x, &down).unwrap().unwrap().0,
        );
        ensure(a == 1.0 && b == -1.0, || format!("monotone n={n}: {a}, {b}"))?;
    }
    Ok(format!("{compared} tied vectors within {worst:.1e}; monotone exact"))
}

fn c4_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, tol) = (1e-6, 1e-4);
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / 1f64.max(a.abs()).max(b.abs());
    for point in 0..100 {
        let n = rng.random_range(10..80);
        let (b0, b1) = (rng.random_range(-1.0..1.5), rng.random_range(-0.8..0.8));
        let alpha = rng.random_range(0.05..3.0);
        let (y, x) = common::simulate_counts(&mut rng, n, b0, b1, alpha);
        let d = DesignMatrix::from_dense(&y, &[("x", &x)], true).map_err(|e| e.to_string())?;
        let beta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let ln_alpha: f64 = rng.random_range(-4.0..1.5);

        let (g, hs) = poisson_gradient_hessian(&d, &beta);
        let fg = common::fd_gradient(|b| poisson_loglik(&d, b), &beta, h);
        let fh = common::fd_jacobian(|b| poisson_gradient_hessian(&d, b).0.as_slice().to_vec(), &beta, h);
        for a in 0..2 {
            worst = worst.max(rel(g[a], fg[a]));
            for b in 0..2 {
                worst = worst.max(rel(hs[(a, b)], fh[a][b]));
            }
        }
        let theta = [beta[0], beta[1], ln_alpha];
        let (g, hs) = negbin_gradient_hessian(&d, &beta, ln_alpha);
        let fg = common::fd_gradient(|t| negbin_loglik(&d, &t[..2], t[2]), &theta, h);
        let fh = common::fd_jacobian(
            |t| negbin_gradient_hessian(&d, &t[..2], t[2]).0.as_slice().to_vec(),
            &theta,
            h,
        );
        for a in 0..3 {
            worst = worst.max(rel(g[a], fg[a]));
            for b in 0..3 {
                worst = worst.max(rel(hs[(a, b)], fh[a][b]));
            }
        }
        ensure(worst <= tol, || {
            format!("point {point}: relative deviation {worst:e} > {tol:e}")
        })?;
    }
    Ok(format!(
        "100 points, Poisson and NB2; max relative deviation {worst:.1e}"
    ))
}

fn c5_intercept_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut samples = 0;
    while samples < 100 {
        let n = rng.random_range(5..500);
        let mean = rng.random_range(0.1..20.0);
        let alpha = rng.random_range(0.0..2.0);
        let (y, _) = common::simulate_counts(&mut rng, n, f64::ln(mean), 0.0, alpha);
        let ybar = y.iter().sum::<f64>() / n as f64;
        if ybar == 0.0 {
            continue;
        }
        let d = DesignMatrix::from_dense(&y, &[], true).map_err(|e| e.to_string())?;
        let fit = poisson_fit(&d, &FitOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max((fit.rows[0].coef - ybar.ln()).abs());
        samples += 1;
    }
    ensure(worst <= 1e-8, || format!("max |b0 - ln(ybar)| = {worst:e} > 1e-8"))?;
    Ok(format!("100 samples, max |b0 - ln(ybar)| = {worst:.1e}"))
}

fn c6_nb_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (y, x) = common::simulate_counts(&mut rng, 5000, 0.5, 0.3, 1.5);
    let d = DesignMatrix::from_dense(&y, &[("x", &x)], true).map_err(|e| e.to_string())?;
    let opts = FitOptions::default();
    let pois = poisson_fit(&d, &opts).map_err(|e| e.to_string())?;
    let gof = poisson_gof(&pois, &d).map_err(|e| e.to_string())?;
    let nb = negbin_fit_from(&d, &pois.coefficients(), &opts).map_err(|e| e.to_string())?;
    let lr = lr_test_alpha(&pois, &nb).map_err(|e| e.to_string())?;
    let b0 = nb.coef("_cons").ok_or("no intercept")?.coef;
    let b1 = nb.coef("x").ok_or("no slope")?.coef;
    let alpha = nb.alpha.as_ref().ok_or("no alpha")?.alpha;
    ensure((b0 - 0.5).abs() <= 0.1, || format!("b0 = {b0}"))?;
    ensure((b1 - 0.3).abs() <= 0.1, || format!("b1 = {b1}"))?;
    ensure((alpha - 1.5).abs() <= 0.2, || format!("alpha = {alpha}"))?;
    ensure(gof.p_value < 0.001, || format!("GOF p = {}", gof.p_value))?;
    ensure(lr.p_value < 0.001, || format!("LR p = {}", lr.p_value))?;
    let t = within_time(start, Duration::from_secs(30))?;
    Ok(format!(
        "b = ({b0:.4}, {b1:.4}), alpha = {alpha:.4}, GOF p = {:.1e}, LR p = {:.1e}; {t:.2?}",
        gof.p_value, lr.p_value
    ))
}

fn c7_nesting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let opts = FitOptions::default();
    let mut worst = 0.0f64;
    let mut below = 0;
    for rep in 0..100 {
        let (y, x) = common::simulate_counts(&mut rng, 1000, 0.5, 0.3, 0.0);
        let d = DesignMatrix::from_dense(&y, &[("x", &x)], true).map_err(|e| e.to_string())?;
        let pois = poisson_fit(&d, &opts).map_err(|e| e.to_string())?;
        let nested = negbin_loglik(&d, &pois.coefficients(), 1e-10f64.ln());
        worst = worst.max((nested - pois.log_likelihood).abs());
        let nb = negbin_fit_from(&d, &pois.coefficients(), &opts).map_err(|e| format!("replicate {rep}: {e}"))?;
        let lr = lr_test_alpha(&pois, &nb).map_err(|e| e.to_string())?;
        if lr.statistic < 4.0 {
            below += 1;
        }
    }
    ensure(worst <= 1e-4, || format!("|ll_nb(1e-10) - ll_pois| = {worst:e} > 1e-4"))?;
    ensure(below >= 95, || format!("LR < 4 in only {below}/100 replicates"))?;
    Ok(format!("max ll gap {worst:.1e}; LR < 4 in {below}/100 replicates"))
}

fn c8_codeset() -> Outcome {
    let cs = ComplicationCodeset::embedded();
    ensure(cs.len() == 39, || format!("{} entries", cs.len()))?;
    let prefixes: Vec<&str> = cs.entries().iter().map(|e| e.prefix.as_str()).collect();
    for e in cs.entries() {
        ensure(
            match_complication(&e.prefix, &cs).map(|m| &m.prefix) == Some(&e.prefix),
            || format!("{} does not match itself", e.prefix),
        )?;
    }
    let codes = ["996.52", "998.59", "250.00"];
    let case = CaseRecord {
        case_id: "example".into(),
        day_offset: Some(0),
        end_day_offset: Some(1),
        providers: BTreeSet::new(),
        age: 50,
        gender: Gender::Female,
        surgery_type: 1,
        dx_codes: codes.iter().map(|s| s.to_string()).collect(),
    };
    let c = count_complications(&case, &cs, false);
    let oracle = common::complication_count(&codes, &prefixes);
    ensure(c == 2 && oracle == 2, || format!("C = {c}, oracle {oracle}"))?;
    Ok("39 prefixes self-match; worked example C = 2 (oracle agrees)".into())
}

fn read_tree(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        files.push((
            e.file_name().to_string_lossy().into_owned(),
            std::fs::read(e.path()).map_err(|e| e.to_string())?,
        ));
    }
    files.sort();
    Ok(files)
}

fn c9_end_to_end() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig {
        n_cases: 20_000,
        n_providers: 1000,
        ..SynthConfig::default()
    };
    let input = tmp.path().join("cases.csv");
    let truth = pipeline::synth_generate(&synth, &input, None).map_err(|e| e.to_string())?;
    let true_beta = truth.coefficients["teamSize"];
    let out = tmp.path().join("out");
    let cfg = PipelineConfig {
        input,
        output_dir: out.clone(),
        ..PipelineConfig::default()
    };
    let run = pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let (nb, _) = run.negbin.as_ref().ok_or("no NB fit")?;
    let beta = nb.coef("teamSize").ok_or("teamSize not in model")?.coef;
    ensure((beta - 0.15).abs() <= 0.05 && true_beta == 0.15, || {
        format!("teamSize {beta} (truth {true_beta})")
    })?;

    let text = |name: &str| std::fs::read_to_string(out.join(name)).map_err(|e| format!("{name}: {e}"));
    let segments = text("segments.tsv")?;
    ensure(
        segments.lines().count() == run.segments.len() + 1 && run.segments.len() >= 2,
        || format!("segments.tsv has {} lines", segments.lines().count()),
    )?;
    let corr = text("correlation.tsv")?;
    ensure(
        corr.lines().count() == cfg.regression.correlation_columns.len() + 1,
        || "correlation.tsv is not one row per measure".into(),
    )?;
    let negbin = text("negbin.tsv")?;
    for name in cfg
        .regression
        .columns
        .iter()
        .map(String::as_str)
        .chain(["_cons", "alpha"])
    {
        ensure(negbin.lines().any(|l| l.split('\t').next() == Some(name)), || {
            format!("negbin.tsv has no `{name}` row")
        })?;
    }
    ensure(text("lr_test.tsv").is_ok() && text("regression.txt").is_ok(), || {
        "missing LR test".into()
    })?;

    let first = read_tree(&out)?;
    pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
    ensure(first == read_tree(&out)?, || "rerun output differs".into())?;
    let t = within_time(start, Duration::from_secs(300))?;
    Ok(format!(
        "teamSize = {beta:.4} (truth 0.15); {} segments; {} files byte-identical on rerun; {t:.2?}",
        run.segments.len(),
        first.len()
    ))
}

fn c10_scale() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 1000;
    let mut edges = BTreeSet::new();
    while edges.len() < 80_000 {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let g = CoworkerGraph::from_index_edges(n, &edges);
    let start = Instant::now();
    let m = compute_all(&g, &MetricsConfig::default()).map_err(|e| e.to_string())?;
    let t = within_time(start, Duration::from_secs(10))?;
    for nm in m.values() {
        for x in [nm.degree, nm.betweenness, nm.closeness, nm.eigenvector, nm.clustering] {
            ensure((0.0..=1.0).contains(&x), || {
                format!("{}: value {x} outside [0, 1]", nm.provider_id)
            })?;
        }
    }
    Ok(format!("{} nodes, {} edges; {t:.2?}", g.node_count(), g.edge_count()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("centrality oracle suite", c1_centrality_oracle),
        ("projection correctness", c2_projection),
        ("spearman", c3_spearman),
        ("gradient checks", c4_gradients),
        ("poisson intercept identity", c5_intercept_identity),
        ("negative binomial recovery", c6_nb_recovery),
        ("nesting", c7_nesting),
        ("codeset", c8_codeset),
        ("end-to-end synthetic run", c9_end_to_end),
        ("scale smoke", c10_scale),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
