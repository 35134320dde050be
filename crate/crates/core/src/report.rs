//! Plot-ready rendering of per-step metrics.

use std::io::{self, Write};

use crate::trainer::StepMetrics;

pub const METRICS_HEADER: &str = "step,mean_reward,confidence,gate,alpha,loss,ess_mean,grad_norm,entropy_norm,baseline";

/// Renders `x` with 9 significant digits: plain decimal for moderate
/// magnitudes, scientific notation outside `[1e-4, 1e9)`.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-4..9).contains(&magnitude) {
        let decimals = (8 - magnitude).max(0) as usize;
        let text = format!("{x:.decimals$}");
        // Rounding can carry into a new leading digit (9.99... -> 10.0).
        let digits = text.trim_start_matches('-').replace('.', "");
        let significant = digits.trim_start_matches('0').len();
        if significant > 9 && decimals > 0 {
            let decimals = decimals - 1;
            return format!("{x:.decimals$}");
        }
        text
    } else {
        format!("{x:.8e}")
    }
}

pub fn metrics_row(m: &StepMetrics) -> String {
    let fields = [
        m.mean_reward,
        m.confidence,
        m.gate,
        m.alpha,
        m.loss,
        m.ess_mean,
        m.grad_norm,
        m.entropy_norm,
        m.baseline,
    ];
    let mut row = m.step.to_string();
    for f in fields {
        row.push(',');
        row.push_str(&format_sig9(f));
    }
    row
}

/// Header plus one newline-terminated row per step.
pub fn write_metrics_csv<W: Write>(mut out: W, metrics: &[StepMetrics]) -> io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(out, "{}", metrics_row(m))?;
    }
    Ok(())
}

pub fn metrics_csv_string(metrics: &[StepMetrics]) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, metrics).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("ascii output")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig9(0.0), "0.00000000");
        assert_eq!(format_sig9(-0.0), "0.00000000");
        assert_eq!(format_sig9(0.123456789123), "0.123456789");
        assert_eq!(format_sig9(1.0), "1.00000000");
        assert_eq!(format_sig9(-2.5), "-2.50000000");
        assert_eq!(format_sig9(123.456), "123.456000");
        assert_eq!(format_sig9(9.999999999), "10.0000000");
        assert_eq!(format_sig9(1.5e-7), "1.50000000e-7");
        assert_eq!(format_sig9(0.00012345), "0.000123450000");
    }

    #[test]
    fn csv_has_header_and_trailing_newline() {
        let m = StepMetrics {
            step: 3,
            mean_reward: 0.5,
            confidence: 0.0,
            gate: 0.0,
            alpha: 0.6,
            loss: 0.01,
            ess_mean: 4.0,
            grad_norm: 0.2,
            entropy_norm: 1.0,
            baseline: 0.05,
            max_abs_anchored_logit: 0.0,
        };
        let text = metrics_csv_string(&[m]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 2);
        assert!(text.ends_with('\n'));
        assert_eq!(lines[1].split(',').count(), 10);
        assert!(lines[1].starts_with("3,0.500000000,0.00000000,0.00000000,0.600000000,"));
    }

    proptest::proptest! {
        #[test]
        fn renders_nine_significant_digits(mantissa in 1.0f64..10.0, exp in -12i32..14, negative: bool) {
            let x = if negative { -mantissa } else { mantissa } * 10f64.powi(exp);
            let text = format_sig9(x);
            let back: f64 = text.parse().unwrap();
            proptest::prop_assert!(((back - x) / x).abs() <= 5.000001e-9, "{x} -> {text}");
            let mantissa_digits = text
                .split('e')
                .next()
                .unwrap()
                .chars()
                .filter(char::is_ascii_digit)
                .skip_while(|&c| c == '0')
                .count();
            proptest::prop_assert_eq!(mantissa_digits, 9, "{} -> {}", x, text);
        }
    }
}
