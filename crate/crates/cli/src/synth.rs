//! Deterministic synthetic input bundle.
//!
//! Six fictional countries observed monthly over 2001-01..2005-12, with
//! event streams, covariates, a leader-change history reaching back before
//! the panel, one country leaving the state system early, and a couple of
//! missing covariate cells. Everything derives from a seeded generator so
//! the bundle is byte-reproducible.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ilcf_core::calendar::YearMonth;

const COUNTRIES: [(i64, &str, f64, f64, f64); 6] = [
    // id, name, terror scale, centroid lat, lon
    (101, "Arcadia", 4.2, 10.0, 10.0),
    (102, "Belmora", 3.8, 12.0, 18.0),
    (103, "Corvania", 3.1, 6.0, 25.0),
    (104, "Drevany", 2.6, 20.0, 14.0),
    (105, "Elsmere", 1.4, 28.0, 22.0),
    (106, "Fenwick", 0.8, 2.0, 2.0),
];

// Duration equation of the generating process, on the aggregated lagged
// protest count: lambda = exp(-(b0 + b1 * log10(count + 1))).
const ALPHA: f64 = 0.8;
const BETA: [f64; 2] = [3.6, -1.3];
const AT_RISK_TERROR: f64 = 3.0;

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// All five input files as (name, bytes).
pub fn generate(seed: u64) -> Vec<(&'static str, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = YearMonth {
        year: 2001,
        month: 1,
    };
    let months = 60i64;
    // Fenwick leaves the state system mid-2002.
    let exit_of = |id: i64| -> i64 {
        if id == 106 {
            17
        } else {
            months
        }
    };

    let mut panel = String::from("country,year,month,irr_entry,irr_exit,ilc,gdp,terror\n");
    let mut events =
        String::from("country,year,month,source_sector,target_sector,cameo_root,count\n");
    let mut leaders = String::from("country,year,month,irr_exit\n");
    let mut centroids = String::from("country,lat,lon\n");
    let mut names = String::from("country,name\n");

    // Pre-panel history: some countries have a known prior failure, Elsmere
    // is covered with no failures, Fenwick is deliberately absent so the
    // spell builder's missing-history warning fires.
    leaders.push_str("101,1992,7,1\n");
    leaders.push_str("102,1998,3,1\n");
    leaders.push_str("103,1983,11,1\n");
    leaders.push_str("104,1975,11,1\n");
    leaders.push_str("105,1960,1,0\n");

    for (id, name, terror, lat, lon) in COUNTRIES {
        writeln!(centroids, "{id},{lat},{lon}").expect("write to string");
        writeln!(names, "{id},{name}").expect("write to string");

        let at_risk = terror >= AT_RISK_TERROR;
        let mut gdp = 800.0 + 450.0 * f64::from(u8::from(terror < 3.0)) + 90.0 * (id - 101) as f64;
        let mut protest_intensity: f64 = if at_risk { 9.0 } else { 1.2 };
        let mut prev_protest_count = protest_intensity.round().max(0.0);
        // Duration clocks align with the pre-panel history above.
        let mut duration = match id {
            101 => 103.0, // since 1992-08
            102 => 35.0,  // since 1998-04
            103 => 207.0, // since 1983-12
            104 => 303.0, // since 1975-12
            _ => 553.0,   // since 1955-01
        };

        for m in 0..exit_of(id) {
            let ym = start.add_months(m);
            gdp *= (0.012 * standard_normal(&mut rng)).exp();
            let gdp_cell = if (id == 105
                && ym
                    == YearMonth {
                        year: 2005,
                        month: 11,
                    })
                || (id == 103
                    && ym
                        == YearMonth {
                            year: 2003,
                            month: 4,
                        }) {
                String::new()
            } else {
                format!("{:.3}", gdp)
            };

            // Event stream: protest counts (material conflict, DIS -> GOV)
            // plus background chatter in other quads and directions.
            let spike = if rng.gen::<f64>() < 0.06 {
                rng.gen_range(8.0..30.0)
            } else {
                0.0
            };
            protest_intensity = (0.75 * protest_intensity
                + 0.25 * if at_risk { 9.0 } else { 1.2 }
                + spike
                + 0.8 * standard_normal(&mut rng))
            .clamp(0.0, 60.0);
            let protest_count = protest_intensity.round() as u64;
            if protest_count > 0 {
                writeln!(
                    events,
                    "{id},{},{},DIS,GOV,14,{protest_count}",
                    ym.year, ym.month
                )
                .expect("write to string");
            }
            let coop: u64 = rng.gen_range(0..6);
            if coop > 0 {
                writeln!(events, "{id},{},{},GOV,GOV,4,{coop}", ym.year, ym.month)
                    .expect("write to string");
            }
            let threats: u64 = rng.gen_range(0..3);
            if threats > 0 {
                writeln!(events, "{id},{},{},GOV,DIS,13,{threats}", ym.year, ym.month)
                    .expect("write to string");
            }

            // Failure draw from the generating hazard, using last month's
            // protest count the way the fitted models will (lagged, logged).
            let mut failed = false;
            if at_risk {
                let x = (prev_protest_count + 1.0).log10();
                let lambda = (-(BETA[0] + BETA[1] * x)).exp();
                let h = |t: f64| (lambda * t).powf(ALPHA);
                let step = 1.0 - (h(duration - 1.0) - h(duration)).exp();
                failed = rng.gen::<f64>() < step;
            }
            let (irr_entry, irr_exit) = if failed {
                let style: f64 = rng.gen();
                if style < 0.6 {
                    (0u8, 1u8)
                } else if style < 0.85 {
                    (1, 1)
                } else {
                    (1, 0)
                }
            } else {
                (0, 0)
            };
            let ilc = u8::from(irr_entry == 1 || irr_exit == 1);
            writeln!(
                panel,
                "{id},{},{},{irr_entry},{irr_exit},{ilc},{gdp_cell},{terror}",
                ym.year, ym.month
            )
            .expect("write to string");
            if ilc == 1 {
                writeln!(leaders, "{id},{},{},1", ym.year, ym.month).expect("write to string");
                duration = 1.0;
            } else {
                duration += 1.0;
            }
            prev_protest_count = protest_count as f64;
        }
    }

    vec![
        ("panel.csv", panel.into_bytes()),
        ("events.csv", events.into_bytes()),
        ("leaders.csv", leaders.into_bytes()),
        ("centroids.csv", centroids.into_bytes()),
        ("names.csv", names.into_bytes()),
    ]
}

/// Writes the bundle into a directory.
pub fn write_bundle(dir: &Path, seed: u64) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in generate(seed) {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}
