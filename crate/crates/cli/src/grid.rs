//! Grid specifications: `start:stop:count` (inclusive, evenly spaced) or a
//! comma-separated list of values.

pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let spec = spec.trim();
    let number = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("invalid grid value `{}` in `{spec}`", s.trim()))
    };
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, count] = parts[..] else {
            return Err(format!("range grid must be `start:stop:count`, got `{spec}`"));
        };
        let (start, stop) = (number(start)?, number(stop)?);
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| format!("grid point count must be a positive integer, got `{count}`"))?;
        match count {
            0 => return Err("grid point count must be at least 1".into()),
            1 if start != stop => {
                return Err(format!("a one-point range needs start == stop, got `{spec}`"))
            }
            1 => vec![start],
            _ => {
                let last = (count - 1) as f64;
                (0..count)
                    .map(|i| {
                        if i == count - 1 {
                            stop
                        } else {
                            start + (stop - start) * i as f64 / last
                        }
                    })
                    .collect()
            }
        }
    } else {
        spec.split(',').map(number).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err("grid is empty".into());
    }
    Ok(values)
}

/// A sweep axis `key=grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<f64>,
}

pub fn parse_axis(spec: &str) -> Result<Axis, String> {
    let (key, grid) = spec
        .split_once('=')
        .ok_or_else(|| format!("axis must be `key=grid`, got `{spec}`"))?;
    Ok(Axis {
        key: key.trim().to_string(),
        values: parse_grid(grid)?,
    })
}
