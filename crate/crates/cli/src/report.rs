//! Fixed-precision CSV reports.

use crate::{ExpectRow, ScenarioCell};
use nphgsd_core::design::DesignSummary;
use nphgsd_core::normal;

pub(crate) fn fmt4(x: f64) -> String {
    if x.is_nan() {
        return String::new();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

fn opt4(x: Option<f64>) -> String {
    x.map(fmt4).unwrap_or_default()
}

fn write(rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    rows(&mut w).expect("writing to memory");
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 fields")
}

pub(crate) fn design_csv(s: &DesignSummary) -> String {
    write(|w| {
        w.write_record([
            "analysis", "time", "n", "events", "ahr", "event_fraction", "test", "bound", "z", "nominal_p",
            "cum_crossing_h1", "cum_crossing_h0",
        ])?;
        for r in &s.analyses {
            let head = [r.analysis.to_string(), fmt4(r.time), fmt4(r.n), fmt4(r.events), fmt4(r.ahr), fmt4(r.event_fraction)];
            let mut eff = head.to_vec();
            eff.extend([
                r.test.clone(),
                "efficacy".into(),
                fmt4(r.efficacy_z),
                fmt4(r.nominal_p),
                fmt4(r.cum_efficacy_h1),
                fmt4(r.cum_efficacy_h0),
            ]);
            w.write_record(&eff)?;
            if r.futility_z > f64::NEG_INFINITY {
                let mut fut = head.to_vec();
                fut.extend([
                    r.test.clone(),
                    "futility".into(),
                    fmt4(r.futility_z),
                    fmt4(normal::sf(r.futility_z)),
                    fmt4(r.cum_futility_h1),
                    fmt4(r.cum_futility_h0),
                ]);
                w.write_record(&fut)?;
            }
        }
        Ok(())
    })
}

pub(crate) fn expect_csv(rows: &[ExpectRow]) -> String {
    write(|w| {
        w.write_record(["time", "ahr", "expected_events"])?;
        for r in rows {
            w.write_record([fmt4(r.time), fmt4(r.ahr), fmt4(r.expected_events)])?;
        }
        Ok(())
    })
}

pub(crate) fn scenarios_csv(cells: &[ScenarioCell]) -> String {
    write(|w| {
        w.write_record(["scenario", "test", "asymptotic", "simulated", "mc_se"])?;
        for c in cells {
            w.write_record([c.scenario.clone(), c.test.clone(), opt4(c.asymptotic), opt4(c.simulated), opt4(c.mc_se)])?;
        }
        Ok(())
    })
}
