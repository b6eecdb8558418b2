//! Run-directory layout: resolved config echo, a manifest, and bit-stable
//! CSV tables (shortest round-trip float formatting throughout).

use anyhow::{bail, Context, Result};
use rvm1d5::maxwell::SourceGrid;
use rvm1d5::pic::{DiagRow, FieldSnap, LayerSample, SimulationConfig, SimulationOutput};
use rvm1d5::sampling::{MacroParticle, ParticleEnsemble};
use rvm1d5::trajectory::Species;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub wall_clock_secs: f64,
    pub outputs: Vec<String>,
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn time_tag(t: f64) -> String {
    format!("{t}")
}

/// Write a completed run to `dir`; returns the manifest.
pub fn write_run(dir: &Path, out: &SimulationOutput, wall_clock_secs: f64) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();

    let config_toml = toml::to_string_pretty(&out.config)?;
    fs::write(dir.join("config.toml"), &config_toml)?;
    outputs.push("config.toml".to_string());

    for (k, t) in out.times.iter().enumerate() {
        let f = &out.fields[k];
        let nx = f.e1.len();
        let dx = 1.0 / (nx - 1) as f64;
        let mut s = String::from("x,E1,E2,B\n");
        for i in 0..nx {
            writeln!(s, "{},{},{},{}", i as f64 * dx, f.e1[i], f.e2[i], f.b[i])?;
        }
        let name = format!("fields_{}.csv", time_tag(*t));
        fs::write(dir.join(&name), s)?;
        outputs.push(name);

        let m = &out.moments[k];
        let mut s = String::from("x,rho,j1,j2\n");
        for i in 0..nx {
            writeln!(s, "{},{},{},{}", i as f64 * dx, m.rho[i], m.j1[i], m.j2[i])?;
        }
        let name = format!("moments_{}.csv", time_tag(*t));
        fs::write(dir.join(&name), s)?;
        outputs.push(name);

        if out.config.output.particles {
            let mut s = String::from("species,x,v1,v2,w\n");
            for ens in &out.particles[k] {
                let tag = match ens.species {
                    Species::Ion => "ion",
                    Species::Electron => "electron",
                };
                for p in &ens.parts {
                    writeln!(s, "{tag},{},{},{},{}", p.x, p.v1, p.v2, p.w)?;
                }
            }
            let name = format!("particles_{}.csv", time_tag(*t));
            fs::write(dir.join(&name), s)?;
            outputs.push(name);
        }
    }

    let mut s = String::from(
        "t,energy,charge,max_abs_v,min_wall_dist,max_psiext_on_support,max_dxE2,max_dxB\n",
    );
    for d in &out.diagnostics {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            d.t,
            d.energy,
            d.charge,
            d.max_abs_v,
            d.min_wall_dist,
            d.max_psiext_on_support,
            d.max_dx_e2,
            d.max_dx_b
        )?;
    }
    fs::write(dir.join("diagnostics.csv"), s)?;
    outputs.push("diagnostics.csv".to_string());

    if let Some(samples) = &out.layer_samples {
        let mut s = String::from("t,x,v1,v2,wdt,sign\n");
        for l in samples {
            writeln!(s, "{},{},{},{},{},{}", l.t, l.x, l.v1, l.v2, l.wdt, l.sign)?;
        }
        fs::write(dir.join("layer_samples.csv"), s)?;
        outputs.push("layer_samples.csv".to_string());
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: out.config.seed,
        config_hash: format!("{:016x}", fnv64(config_toml.as_bytes())),
        wall_clock_secs,
        outputs,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

fn parse_csv(path: &Path, columns: usize) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
        if cells.len() != columns {
            bail!(
                "{}:{}: expected {columns} columns, got {}",
                path.display(),
                ln + 1,
                cells.len()
            );
        }
        rows.push(cells);
    }
    Ok(rows)
}

fn f(cell: &str) -> Result<f64> {
    cell.parse::<f64>()
        .with_context(|| format!("bad float {cell}"))
}

/// Reload a run directory into a `SimulationOutput` for post-hoc analysis.
pub fn read_run(dir: &Path) -> Result<SimulationOutput> {
    let config: SimulationConfig = toml::from_str(&fs::read_to_string(dir.join("config.toml"))?)
        .context("parsing config.toml")?;

    let diag_rows = parse_csv(&dir.join("diagnostics.csv"), 8)?;
    let mut diagnostics = Vec::new();
    let mut times = Vec::new();
    for r in &diag_rows {
        let t = f(&r[0])?;
        times.push(t);
        diagnostics.push(DiagRow {
            t,
            energy: f(&r[1])?,
            charge: f(&r[2])?,
            max_abs_v: f(&r[3])?,
            min_wall_dist: f(&r[4])?,
            max_psiext_on_support: f(&r[5])?,
            max_dx_e2: f(&r[6])?,
            max_dx_b: f(&r[7])?,
        });
    }

    let mut fields = Vec::new();
    let mut moments = Vec::new();
    let mut particles = Vec::new();
    for t in &times {
        let tag = time_tag(*t);
        let rows = parse_csv(&dir.join(format!("fields_{tag}.csv")), 4)?;
        let mut snap = FieldSnap {
            e1: Vec::new(),
            e2: Vec::new(),
            b: Vec::new(),
        };
        for r in &rows {
            snap.e1.push(f(&r[1])?);
            snap.e2.push(f(&r[2])?);
            snap.b.push(f(&r[3])?);
        }
        fields.push(snap);

        let rows = parse_csv(&dir.join(format!("moments_{tag}.csv")), 4)?;
        let mut src = SourceGrid::zeros(rows.len());
        for (i, r) in rows.iter().enumerate() {
            src.rho[i] = f(&r[1])?;
            src.j1[i] = f(&r[2])?;
            src.j2[i] = f(&r[3])?;
        }
        moments.push(src);

        if config.output.particles {
            let rows = parse_csv(&dir.join(format!("particles_{tag}.csv")), 5)?;
            let mut ion = ParticleEnsemble {
                species: Species::Ion,
                parts: Vec::new(),
            };
            let mut ele = ParticleEnsemble {
                species: Species::Electron,
                parts: Vec::new(),
            };
            for r in &rows {
                let p = MacroParticle {
                    x: f(&r[1])?,
                    v1: f(&r[2])?,
                    v2: f(&r[3])?,
                    w: f(&r[4])?,
                };
                match r[0].as_str() {
                    "ion" => ion.parts.push(p),
                    "electron" => ele.parts.push(p),
                    other => bail!("unknown species tag {other}"),
                }
            }
            let mut snap = vec![ion];
            if config.electron.is_some() {
                snap.push(ele);
            }
            particles.push(snap);
        }
    }

    let layer_path = dir.join("layer_samples.csv");
    let layer_samples = if layer_path.exists() {
        let rows = parse_csv(&layer_path, 6)?;
        let mut samples = Vec::new();
        for r in &rows {
            samples.push(LayerSample {
                t: f(&r[0])?,
                x: f(&r[1])?,
                v1: f(&r[2])?,
                v2: f(&r[3])?,
                wdt: f(&r[4])?,
                sign: f(&r[5])?,
            });
        }
        Some(samples)
    } else {
        None
    };

    let dt = 1.0 / (config.nx - 1) as f64;
    let t_final = *times.last().context("empty run")?;
    let initial_l1 = vec![config.ion.l1_norm()];
    let ampere_residual = vec![0.0; times.len()];
    Ok(SimulationOutput {
        config,
        dt,
        t_final,
        times,
        fields,
        moments,
        particles,
        diagnostics,
        ampere_residual,
        layer_samples,
        initial_l1,
    })
}
