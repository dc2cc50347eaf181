use std::path::Path;

use mfc_core::config::ExperimentConfig;

/// Reads and validates a config file. Errors name the file and, when the
/// offending key can be found, its line.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: cannot read config: {e}", path.display()))?;
    ExperimentConfig::from_json(&text).map_err(|e| {
        let msg = e.to_string();
        match locate(&text, &msg) {
            Some(line) => format!("{}:{line}: {msg}", path.display()),
            None => format!("{}: {msg}", path.display()),
        }
    })
}

/// Line of the first dotted key path mentioned in `msg`, e.g.
/// `verify.tolerances.bsde`. Parse errors already carry their line and
/// return `None`.
fn locate(text: &str, msg: &str) -> Option<usize> {
    if msg.contains(" at line ") {
        return None;
    }
    let path = msg.split_whitespace().find(|w| {
        w.contains('.')
            && w.split('.')
                .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
    })?;
    let mut pos = 0;
    for key in path.split('.') {
        pos += text[pos..].find(&format!("\"{key}\""))?;
    }
    Some(text[..pos].matches('\n').count() + 1)
}

#[cfg(test)]
mod tests {
    use super::locate;

    #[test]
    fn locates_nested_keys() {
        let text = "{\n  \"sim\": {\n    \"dt\": 0.1,\n    \"particles\": 1\n  }\n}";
        assert_eq!(
            locate(
                text,
                "config error: sim.particles must be at least 2, got 1"
            ),
            Some(4)
        );
        assert_eq!(locate(text, "expected value at line 3 column 5"), None);
        assert_eq!(locate(text, "verify.u_grid needs min < max"), None);
    }
}
