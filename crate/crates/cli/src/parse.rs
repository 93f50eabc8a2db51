//! Small text parsers for command-line values.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ParseError(pub String);

/// Parse a comma-separated list of positive finite noise levels, e.g.
/// `"0.1, 0.2,1e-1"`.
pub fn parse_sigma_list(text: &str) -> Result<Vec<f64>, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError("sigma list is empty".into()));
    }
    text.split(',')
        .enumerate()
        .map(|(i, item)| {
            let item = item.trim();
            let v: f64 = item
                .parse()
                .map_err(|_| ParseError(format!("sigma {i}: `{item}` is not a number")))?;
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(ParseError(format!("sigma {i}: {item} must be positive and finite")))
            }
        })
        .collect()
}

/// Like [`parse_sigma_list`] but also accepts zeros (noise-free views).
pub fn parse_noise_list(text: &str) -> Result<Vec<f64>, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError("noise list is empty".into()));
    }
    text.split(',')
        .enumerate()
        .map(|(i, item)| {
            let item = item.trim();
            match item.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                Ok(_) => Err(ParseError(format!("noise {i}: {item} must be nonnegative and finite"))),
                Err(_) => Err(ParseError(format!("noise {i}: `{item}` is not a number"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accepts_spaced_lists() {
        assert_eq!(parse_sigma_list("0.1, 0.2,1e-1").unwrap(), vec![0.1, 0.2, 0.1]);
        assert_eq!(parse_noise_list("0,0.5").unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn rejects_bad_entries() {
        for bad in ["", " ", "0.1,", "a", "0", "-1", "inf", "NaN", "0.1,,0.2"] {
            assert!(parse_sigma_list(bad).is_err(), "{bad}");
        }
        assert!(parse_noise_list("-0.1").is_err());
        let e = parse_sigma_list("0.1,x").unwrap_err();
        assert!(e.0.contains("sigma 1"));
    }

    proptest! {
        #[test]
        fn formatted_lists_parse_back(xs in prop::collection::vec(1e-6f64..1e6, 1..8)) {
            let text = xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
            prop_assert_eq!(parse_sigma_list(&text).unwrap(), xs);
        }

        #[test]
        fn never_panics(s in ".{0,40}") {
            let _ = parse_sigma_list(&s);
            let _ = parse_noise_list(&s);
        }
    }
}
