//! JSON loss report with a fixed key order and 17-significant-digit reals.

use std::fmt::Write;

use flowloss_core::{LossParams, LossReport};

/// Formats `x` with 17 significant digits, enough to round-trip any `f64`.
/// Trailing zeros are trimmed but a fractional part is always kept.
pub fn format_real(x: f64) -> String {
    assert!(x.is_finite(), "JSON cannot carry {x}");
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0.0".into()
        } else {
            "0.0".into()
        };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(1) as usize;
        trim_fraction(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_fraction(mantissa))
    }
}

fn trim_fraction(s: &str) -> String {
    if !s.contains('.') {
        return format!("{s}.0");
    }
    let t = s.trim_end_matches('0');
    if t.ends_with('.') {
        format!("{t}0")
    } else {
        t.to_string()
    }
}

/// Serializes a report as
/// `{"total", "patches": [{"index", "origin", "weight", "loss", "salient_index"}], "params"}`.
pub fn to_json(report: &LossReport, params: &LossParams, saliency_given: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{{");
    let _ = writeln!(s, "  \"total\": {},", format_real(report.total));
    let _ = writeln!(s, "  \"patches\": [");
    for (i, p) in report.patches.iter().enumerate() {
        let comma = if i + 1 < report.patches.len() {
            ","
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "    {{\"index\": {i}, \"origin\": [{}, {}], \"weight\": {}, \"loss\": {}, \"salient_index\": {}}}{comma}",
            p.window.row,
            p.window.col,
            format_real(p.weight),
            format_real(p.loss),
            p.salient
        );
    }
    let _ = writeln!(s, "  ],");
    let _ = writeln!(s, "  \"params\": {{");
    let _ = writeln!(s, "    \"k\": {},", params.patch_size);
    let _ = writeln!(s, "    \"stride\": {},", params.stride);
    let _ = writeln!(s, "    \"tau\": {},", format_real(params.tau));
    let _ = writeln!(s, "    \"sigma\": {},", format_real(params.sigma));
    let _ = writeln!(s, "    \"eps\": {},", format_real(params.eps));
    let _ = writeln!(
        s,
        "    \"salient_source\": \"{}\"",
        if saliency_given { "saliency" } else { "flow" }
    );
    let _ = writeln!(s, "  }}");
    let _ = writeln!(s, "}}");
    s
}
