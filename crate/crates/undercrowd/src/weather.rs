//! Daily weather from a historical archive endpoint, cached on disk so that
//! re-runs never need the network.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use undercrowd_core::ingest::{check_weather, Weather, WeatherRecord};

use crate::artifacts::write_atomic;
use crate::error::{AppError, Result};

/// Daily variables requested, in the order they fill [`Weather`].
pub const DAILY_VARS: [&str; 5] = [
    "temperature_2m_mean",
    "wind_speed_10m_mean",
    "cloud_cover_mean",
    "relative_humidity_2m_mean",
    "precipitation_sum",
];

fn default_url() -> String {
    String::from("https://archive-api.open-meteo.com/v1/archive")
}

fn default_timezone() -> String {
    String::from("UTC")
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from(".weather-cache")
}

fn default_timeout() -> u64 {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherEndpoint {
    #[serde(default = "default_url")]
    pub url: String,
    pub latitude: f64,
    pub longitude: f64,
    #[serde(default = "default_timezone")]
    pub timezone: String,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl WeatherEndpoint {
    pub fn new(url: impl Into<String>, latitude: f64, longitude: f64, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            url: url.into(),
            latitude,
            longitude,
            timezone: default_timezone(),
            cache_dir: cache_dir.into(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn request_url(&self, start: NaiveDate, end: NaiveDate) -> String {
        let tz: String = self
            .timezone
            .chars()
            .map(|c| if c == '/' { String::from("%2F") } else { c.to_string() })
            .collect();
        format!(
            "{}?latitude={}&longitude={}&start_date={start}&end_date={end}&daily={}&timezone={tz}",
            self.url,
            self.latitude,
            self.longitude,
            DAILY_VARS.join(",")
        )
    }

    pub fn cache_path(&self, start: NaiveDate, end: NaiveDate) -> PathBuf {
        let digest = Sha256::digest(self.request_url(start, end).as_bytes());
        self.cache_dir
            .join(format!("weather-{}.json", &hex::encode(digest)[..16]))
    }
}

#[derive(Deserialize)]
struct ArchiveResponse {
    daily: ArchiveDaily,
}

#[derive(Deserialize)]
struct ArchiveDaily {
    time: Vec<NaiveDate>,
    #[serde(flatten)]
    values: std::collections::BTreeMap<String, Vec<Option<f64>>>,
}

/// Parses an archive response body. Dates with any null value are left
/// out, so the coverage check reports them.
pub fn parse_archive(body: &str) -> Result<Vec<WeatherRecord>> {
    let r: ArchiveResponse =
        serde_json::from_str(body).map_err(|e| AppError::Network(format!("unexpected response: {e}")))?;
    let mut cols = Vec::with_capacity(DAILY_VARS.len());
    for v in DAILY_VARS {
        let c = r
            .daily
            .values
            .get(v)
            .ok_or_else(|| AppError::Network(format!("response lacks daily {v}")))?;
        if c.len() != r.daily.time.len() {
            return Err(AppError::Network(format!("daily {v} has the wrong length")));
        }
        cols.push(c);
    }
    Ok(r.daily
        .time
        .iter()
        .enumerate()
        .filter_map(|(i, &date)| {
            let w = Weather {
                temperature: cols[0][i]?,
                wind_speed: cols[1][i]?,
                cloud_coverage: cols[2][i]?,
                humidity: cols[3][i]?,
                rain: cols[4][i]?,
            };
            Some(WeatherRecord { date, weather: w })
        })
        .collect())
}

fn fetch_body(ep: &WeatherEndpoint, url: &str) -> Result<String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(ep.timeout_secs)))
        .build()
        .into();
    let mut resp = agent
        .get(url)
        .call()
        .map_err(|e| AppError::Network(format!("{url} unreachable and no cached response: {e}")))?;
    resp.body_mut()
        .read_to_string()
        .map_err(|e| AppError::Network(format!("reading response from {url}: {e}")))
}

/// One record per date in `[start, end]`, from the cache when present and
/// from the endpoint otherwise. Fresh responses are cached before parsing.
pub fn fetch_weather(ep: &WeatherEndpoint, start: NaiveDate, end: NaiveDate) -> Result<Vec<WeatherRecord>> {
    let cache = ep.cache_path(start, end);
    let body = match fs::read_to_string(&cache) {
        Ok(b) => b,
        Err(_) => {
            let body = fetch_body(ep, &ep.request_url(start, end))?;
            fs::create_dir_all(&ep.cache_dir).map_err(|e| AppError::io(&ep.cache_dir, e))?;
            write_atomic(&cache, body.as_bytes())?;
            body
        }
    };
    let records = parse_archive(&body)?;
    Ok(check_weather(&records, start, end)?)
}

/// Daily weather from a CSV file, restricted to `[start, end]`.
pub fn load_weather_file(path: &Path, start: NaiveDate, end: NaiveDate) -> Result<Vec<WeatherRecord>> {
    let records = crate::io::read_weather(path)?;
    Ok(check_weather(&records, start, end)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 6, day).unwrap()
    }

    fn body(days: &[u32], null_at: Option<usize>) -> String {
        let time: Vec<String> = days.iter().map(|x| format!("\"{}\"", d(*x))).collect();
        let vals = |v: f64| -> String {
            let items: Vec<String> = (0..days.len())
                .map(|i| if Some(i) == null_at { "null".into() } else { format!("{}", v + i as f64) })
                .collect();
            items.join(",")
        };
        format!(
            "{{\"latitude\":45.0,\"daily_units\":{{}},\"daily\":{{\"time\":[{}],\"temperature_2m_mean\":[{}],\"wind_speed_10m_mean\":[{}],\"cloud_cover_mean\":[{}],\"relative_humidity_2m_mean\":[{}],\"precipitation_sum\":[{}]}}}}",
            time.join(","),
            vals(20.0),
            vals(10.0),
            vals(40.0),
            vals(60.0),
            vals(0.0)
        )
    }

    /// Serves `n` requests with `body`, then stops listening.
    fn stub_server(body: String, n: usize) -> (String, std::thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/archive", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut served = 0;
            for stream in listener.incoming().take(n) {
                let mut s = stream.unwrap();
                let mut buf = [0u8; 4096];
                let _ = s.read(&mut buf);
                let resp = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
                s.write_all(resp.as_bytes()).unwrap();
                served += 1;
            }
            served
        });
        (url, handle)
    }

    #[test]
    fn archive_body_parses() {
        let r = parse_archive(&body(&[6, 7, 8], None)).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[1].weather.temperature, 21.0);
        let gap = parse_archive(&body(&[6, 7, 8], Some(1))).unwrap();
        assert_eq!(gap.len(), 2);
    }

    #[test]
    fn warm_cache_works_without_the_server() {
        let dir = tempfile::tempdir().unwrap();
        let (url, server) = stub_server(body(&[6, 7, 8, 9], None), 1);
        let ep = WeatherEndpoint::new(url, 45.07, 7.69, dir.path().join("cache"));
        let first = fetch_weather(&ep, d(6), d(9)).unwrap();
        assert_eq!(server.join().unwrap(), 1);
        assert!(ep.cache_path(d(6), d(9)).exists());
        // The listener is gone now; only the cache can answer.
        let second = fetch_weather(&ep, d(6), d(9)).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.len(), 4);
    }

    #[test]
    fn unreachable_without_cache_fails() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/archive", listener.local_addr().unwrap());
        drop(listener);
        let dir = tempfile::tempdir().unwrap();
        let mut ep = WeatherEndpoint::new(url, 45.0, 7.0, dir.path());
        ep.timeout_secs = 5;
        let err = fetch_weather(&ep, d(6), d(7)).unwrap_err();
        assert!(matches!(err, AppError::Network(_)), "{err}");
    }

    #[test]
    fn gap_in_response_names_the_date() {
        let dir = tempfile::tempdir().unwrap();
        let (url, server) = stub_server(body(&[6, 7, 8], Some(1)), 1);
        let ep = WeatherEndpoint::new(url, 45.0, 7.0, dir.path());
        let err = fetch_weather(&ep, d(6), d(8)).unwrap_err();
        server.join().unwrap();
        assert!(err.to_string().contains("2022-06-07"), "{err}");
    }
}
