//! Reads rendered markdown events back into their parts.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedEvent {
    pub header: bool,
    pub title: String,
    pub time: String,
    pub keys: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn split_row(line: &str) -> Option<Vec<String>> {
    let inner = line.strip_prefix("| ")?.strip_suffix(" |")?;
    Some(inner.split(" | ").map(str::to_string).collect())
}

pub fn parse_event(text: &str) -> Result<ParsedEvent, String> {
    let mut lines = text.lines();
    let title_line = lines.next().ok_or("empty event")?;
    let (header, rest) = if let Some(r) = title_line.strip_prefix("## ") {
        (false, r)
    } else if let Some(r) = title_line.strip_prefix("# ") {
        (true, r)
    } else {
        return Err(format!("bad title line {title_line:?}"));
    };
    let (title, time) = rest
        .strip_suffix(']')
        .and_then(|r| r.rsplit_once(" ["))
        .ok_or_else(|| format!("no time in {title_line:?}"))?;
    let body: Vec<&str> = lines.collect();
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    if body.first().is_some_and(|l| l.starts_with("| ")) {
        keys = split_row(body[0]).ok_or("bad table header")?;
        let sep = split_row(body.get(1).ok_or("missing separator")?).ok_or("bad separator")?;
        if sep.len() != keys.len() || sep.iter().any(|c| c.is_empty() || c.chars().any(|ch| ch != '-')) {
            return Err("bad separator".into());
        }
        for line in &body[2..] {
            let row = split_row(line).ok_or_else(|| format!("bad table row {line:?}"))?;
            if row.len() != keys.len() {
                return Err(format!("row width {} != {}", row.len(), keys.len()));
            }
            rows.push(row);
        }
    } else if !body.is_empty() {
        let mut row = Vec::new();
        for line in &body {
            let item = line.strip_prefix("- ").ok_or_else(|| format!("bad bullet {line:?}"))?;
            let (k, v) = match item.split_once(": ") {
                Some((k, v)) => (k, v),
                None => (
                    item.strip_suffix(':').ok_or_else(|| format!("bad bullet {line:?}"))?,
                    "",
                ),
            };
            keys.push(k.to_string());
            row.push(v.to_string());
        }
        rows.push(row);
    }
    Ok(ParsedEvent {
        header,
        title: title.to_string(),
        time: time.to_string(),
        keys,
        rows,
    })
}

pub fn parse_window(text: &str) -> Result<Vec<ParsedEvent>, String> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split("\n\n").map(parse_event).collect()
}
