use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};

use msconv::block::FusionKind;
use msconv::data::{
    gen_heldout, gen_synthetic, load_dataset, load_image, make_pairs, pair_accuracy, pairs_path,
    read_pairs, save_dataset, score_pairs, tar_at_far, write_pairs, Report,
};
use msconv::train::gradcheck::{all_scopes, gradcheck, Scope};
use msconv::train::{
    ablation_run, embed_all, flops_report, load_checkpoint, load_training_data, train_on,
    visualize_features, write_checkpoint, Precision, RunConfig, DEFAULT_TOP_K,
};
use msconv::Real;

const USAGE: &str = "\
usage: msconv <command> [options] [--<config key> <value> ...]

commands:
  gen-data   --out DIR [--heldout] [--max-impostors N]
  train      --out DIR
  ablate     [--kinds k1,k2,...] [--out FILE]
  verify     --checkpoint DIR --data DIR [--pairs FILE] [--far F]
  flops      [--batch N]
  viz        --checkpoint DIR --image FILE --out DIR [--layer N] [--top-k K]
  gradcheck  [all | backbone | block[:kind] | <op>]

every command accepts --config FILE (lines of `key = value`); any config
key may also be given as --key value and overrides the file.";

/// Command options taking a value, and boolean flags.
fn command_options(cmd: &str) -> Option<(&'static [&'static str], &'static [&'static str])> {
    Some(match cmd {
        "gen-data" => (&["out", "max-impostors"], &["heldout"]),
        "train" => (&["out"], &[]),
        "ablate" => (&["kinds", "out"], &[]),
        "verify" => (&["checkpoint", "data", "pairs", "far"], &[]),
        "flops" => (&["batch"], &[]),
        "viz" => (&["checkpoint", "image", "out", "layer", "top-k"], &[]),
        "gradcheck" => (&[], &[]),
        _ => return None,
    })
}

#[derive(Debug, Default)]
struct Args {
    opts: HashMap<String, String>,
    flags: Vec<String>,
    overrides: Vec<(String, String)>,
    positional: Vec<String>,
}

impl Args {
    fn parse(cmd: &str, raw: &[String]) -> Result<Args> {
        let (valued, flags) = command_options(cmd).ok_or_else(|| anyhow!("unknown command {cmd:?}\n\n{USAGE}"))?;
        let mut a = Args::default();
        let mut it = raw.iter();
        while let Some(arg) = it.next() {
            let Some(name) = arg.strip_prefix("--") else {
                a.positional.push(arg.clone());
                continue;
            };
            if flags.contains(&name) {
                a.flags.push(name.to_string());
                continue;
            }
            let (key, value) = match name.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| anyhow!("--{name} needs a value"))?;
                    (name.to_string(), v.clone())
                }
            };
            if key == "config" || valued.contains(&key.as_str()) {
                a.opts.insert(key, value);
            } else {
                a.overrides.push((key, value));
            }
        }
        Ok(a)
    }

    fn opt(&self, key: &str) -> Option<&str> {
        self.opts.get(key).map(String::as_str)
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.opt(key)
            .map(PathBuf::from)
            .ok_or_else(|| anyhow!("--{key} is required"))
    }

    fn parsed<V: std::str::FromStr>(&self, key: &str, default: V) -> Result<V> {
        match self.opt(key) {
            Some(v) => v.parse().map_err(|_| anyhow!("bad value {v:?} for --{key}")),
            None => Ok(default),
        }
    }

    fn flag(&self, name: &str) -> bool {
        self.flags.iter().any(|f| f == name)
    }

    /// Defaults, then the config file, then `--key value` overrides.
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = self.opt("config") {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            cfg.apply_text(&text).with_context(|| format!("in {path}"))?;
        }
        for (k, v) in &self.overrides {
            cfg.set(k, v).with_context(|| format!("--{k}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn gen_data(args: &Args) -> Result<()> {
    let cfg = args.config()?;
    let out = args.path("out")?;
    let spec = cfg.synthetic_spec();
    let set = if args.flag("heldout") {
        gen_heldout::<f32>(&spec, cfg.heldout_per_identity)?
    } else {
        gen_synthetic::<f32>(&spec)?
    };
    let names = save_dataset(&set, &out)?;
    let pairs = make_pairs(&set.labels, &names, args.parsed("max-impostors", 10_000usize)?, cfg.seed);
    write_pairs(&pairs_path(&out), &pairs)?;
    println!(
        "wrote {} images of {} identities and {} pairs to {}",
        set.len(),
        set.classes(),
        pairs.len(),
        out.display()
    );
    Ok(())
}

fn train_with<T: Real>(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_training_data::<T>(cfg)?;
    let outcome = train_on(cfg, &data)?;
    print!("{}", outcome.log_text());
    write_checkpoint(out, cfg, &outcome)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn train_cmd(args: &Args) -> Result<()> {
    let cfg = args.config()?;
    let out = args.path("out")?;
    match cfg.precision {
        Precision::Single => train_with::<f32>(&cfg, &out),
        Precision::Double => train_with::<f64>(&cfg, &out),
    }
}

fn emit(report: &Report, out: Option<&str>) -> Result<()> {
    let text = report.render();
    print!("{text}");
    if let Some(path) = out {
        fs::write(path, &text).with_context(|| format!("writing {path}"))?;
    }
    Ok(())
}

fn ablate_with<T: Real>(cfg: &RunConfig, kinds: &[FusionKind], out: Option<&str>) -> Result<()> {
    if cfg.data_dir.is_some() {
        bail!("ablation evaluates on held-out synthetic identities; unset data_dir");
    }
    let data = load_training_data::<T>(cfg)?;
    let report = ablation_run(cfg, kinds, &data)?;
    emit(&report.to_report(), out)
}

fn ablate(args: &Args) -> Result<()> {
    let cfg = args.config()?;
    let kinds: Vec<FusionKind> = match args.opt("kinds") {
        Some(list) => list.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => FusionKind::ABLATION.to_vec(),
    };
    match cfg.precision {
        Precision::Single => ablate_with::<f32>(&cfg, &kinds, args.opt("out")),
        Precision::Double => ablate_with::<f64>(&cfg, &kinds, args.opt("out")),
    }
}

fn verify_with<T: Real>(args: &Args) -> Result<()> {
    let (cfg, model) = load_checkpoint::<T>(&args.path("checkpoint")?)?;
    let data_dir = args.path("data")?;
    let pairs_file = args.opt("pairs").map(PathBuf::from).unwrap_or_else(|| pairs_path(&data_dir));
    let far: f64 = args.parsed("far", cfg.far_target)?;
    let (data, names) = load_dataset::<T>(&data_dir)?;
    let pairs = read_pairs(&pairs_file)?;
    let emb = embed_all(&model, &data, cfg.batch_size)?;
    let vs = score_pairs(&emb, &names, &pairs)?;
    let (acc, acc_t) = pair_accuracy(&vs)?;
    let (tar, tar_t) = tar_at_far(&vs, far)?;
    let mut r = Report::new(format!("verification on {}", pairs_file.display()));
    r.value("genuine_pairs", vs.genuine.len())
        .value("impostor_pairs", vs.impostor.len())
        .value("accuracy", acc)
        .value("accuracy_threshold", acc_t)
        .value("far_target", far)
        .value("tar", tar)
        .value("tar_threshold", tar_t);
    emit(&r, None)
}

fn verify(args: &Args) -> Result<()> {
    let cfg_path = args.path("checkpoint")?.join(msconv::train::CONFIG_ECHO);
    let text = fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    match RunConfig::from_text(&text)?.precision {
        Precision::Single => verify_with::<f32>(args),
        Precision::Double => verify_with::<f64>(args),
    }
}

fn flops(args: &Args) -> Result<()> {
    let cfg = args.config()?;
    emit(&flops_report(&cfg, args.parsed("batch", 1usize)?)?, None)
}

fn viz(args: &Args) -> Result<()> {
    let (_, model) = load_checkpoint::<f64>(&args.path("checkpoint")?)?;
    let image = load_image::<f64>(&args.path("image")?)?;
    let out = args.path("out")?;
    let res = visualize_features(
        &model.net,
        &image,
        args.parsed("layer", 0usize)?,
        args.parsed("top-k", DEFAULT_TOP_K)?,
        &out,
    )?;
    let channels: Vec<String> = res.channels.iter().map(usize::to_string).collect();
    println!(
        "wrote {} maps for channels {} to {}",
        res.images.len(),
        channels.join(","),
        out.display()
    );
    Ok(())
}

fn gradcheck_cmd(args: &Args) -> Result<bool> {
    if !args.overrides.is_empty() || args.opt("config").is_some() {
        bail!("gradcheck takes no configuration");
    }
    let scopes = match args.positional.as_slice() {
        [] => all_scopes(),
        [s] if s == "all" => all_scopes(),
        [s] => vec![s.parse::<Scope>()?],
        _ => bail!("gradcheck takes at most one scope"),
    };
    let mut ok = true;
    for s in &scopes {
        let outcome = gradcheck(s)?;
        println!("{}", outcome.line());
        ok &= outcome.passed();
    }
    Ok(ok)
}

fn run(argv: &[String]) -> Result<bool> {
    let Some((cmd, rest)) = argv.split_first() else {
        bail!("{USAGE}");
    };
    if cmd == "-h" || cmd == "--help" || cmd == "help" {
        println!("{USAGE}");
        return Ok(true);
    }
    let args = Args::parse(cmd, rest)?;
    if cmd != "gradcheck" && !args.positional.is_empty() {
        bail!("unexpected argument {:?}", args.positional[0]);
    }
    match cmd.as_str() {
        "gen-data" => gen_data(&args)?,
        "train" => train_cmd(&args)?,
        "ablate" => ablate(&args)?,
        "verify" => verify(&args)?,
        "flops" => flops(&args)?,
        "viz" => viz(&args)?,
        "gradcheck" => return gradcheck_cmd(&args),
        _ => unreachable!("checked by Args::parse"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(&argv) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
