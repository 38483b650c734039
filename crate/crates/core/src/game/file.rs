//! JSON game files: `{"n_states", "n_actions", "gamma", "reward", "transition"}`.
//!
//! Structural errors come from `serde_json` (which knows the line). Invariant
//! violations are mapped back to the line of the offending value by a small
//! path locator over the raw text.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MarkovGame, SIMPLEX_TOL};
use crate::error::{Error, Result};

/// Row-sum tolerance applied when loading transition tensors.
pub const GAME_FILE_LOAD_TOL: f64 = SIMPLEX_TOL;

/// On-disk representation of a [`MarkovGame`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, Copy)]
enum Seg {
    Key(&'static str),
    Index(usize),
}

struct Violation {
    path: Vec<Seg>,
    message: String,
}

impl GameFile {
    pub fn from_game(game: &MarkovGame) -> Self {
        Self {
            n_states: game.n_states(),
            n_actions: game.n_actions(),
            gamma: game.gamma(),
            reward: game.reward_nested(),
            transition: game.transition_nested(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("game file serializes")
    }

    /// Parses and validates `text`; `label` names the source in diagnostics.
    pub fn parse(text: &str, label: &str) -> Result<MarkovGame> {
        let file: GameFile = serde_json::from_str(text).map_err(|e| Error::GameFile {
            path: label.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if let Some(v) = file.first_violation() {
            let line = locate_line(text, &v.path).unwrap_or(1);
            return Err(Error::GameFile {
                path: label.to_string(),
                line,
                message: v.message,
            });
        }
        Ok(MarkovGame::new(
            file.n_states,
            file.n_actions,
            file.gamma,
            file.reward.into_iter().flatten().flatten().collect(),
            file.transition.into_iter().flatten().flatten().flatten().collect(),
        )?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MarkovGame> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(game: &MarkovGame, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, Self::from_game(game).to_json() + "\n")?;
        Ok(())
    }

    fn first_violation(&self) -> Option<Violation> {
        use Seg::{Index as I, Key as K};
        let (ns, na) = (self.n_states, self.n_actions);
        let bad = |path: Vec<Seg>, message: String| Some(Violation { path, message });
        if ns == 0 {
            return bad(vec![K("n_states")], "n_states must be positive".into());
        }
        if na == 0 {
            return bad(vec![K("n_actions")], "n_actions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(vec![K("gamma")], format!("gamma {} not in [0, 1)", self.gamma));
        }
        if self.reward.len() != ns {
            return bad(
                vec![K("reward")],
                format!("reward has {} states, expected {ns}", self.reward.len()),
            );
        }
        if self.transition.len() != ns {
            return bad(
                vec![K("transition")],
                format!("transition has {} states, expected {ns}", self.transition.len()),
            );
        }
        for s in 0..ns {
            if self.reward[s].len() != na {
                return bad(vec![K("reward"), I(s)], format!("reward[{s}] needs {na} rows"));
            }
            if self.transition[s].len() != na {
                return bad(
                    vec![K("transition"), I(s)],
                    format!("transition[{s}] needs {na} rows"),
                );
            }
            for a in 0..na {
                if self.reward[s][a].len() != na {
                    return bad(
                        vec![K("reward"), I(s), I(a)],
                        format!("reward[{s}][{a}] needs {na} entries"),
                    );
                }
                if self.transition[s][a].len() != na {
                    return bad(
                        vec![K("transition"), I(s), I(a)],
                        format!("transition[{s}][{a}] needs {na} rows"),
                    );
                }
                for b in 0..na {
                    let r = self.reward[s][a][b];
                    if !(0.0..=1.0).contains(&r) {
                        return bad(
                            vec![K("reward"), I(s), I(a), I(b)],
                            format!("reward[{s}][{a}][{b}] = {r} outside [0, 1]"),
                        );
                    }
                    let row = &self.transition[s][a][b];
                    let path = vec![K("transition"), I(s), I(a), I(b)];
                    if row.len() != ns {
                        return bad(path, format!("transition[{s}][{a}][{b}] needs {ns} entries"));
                    }
                    if let Some(i) = row.iter().position(|p| !(*p >= 0.0)) {
                        let mut p = path;
                        p.push(I(i));
                        return bad(p, format!("transition[{s}][{a}][{b}][{i}] is negative"));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > GAME_FILE_LOAD_TOL {
                        return bad(
                            path,
                            format!("transition[{s}][{a}][{b}] sums to {total}, expected 1"),
                        );
                    }
                }
            }
        }
        None
    }
}

/// Line (1-based) where the value at `path` starts, if the text is well formed.
fn locate_line(text: &str, path: &[Seg]) -> Option<usize> {
    let mut sc = Scanner {
        b: text.as_bytes(),
        i: 0,
        line: 1,
    };
    sc.descend(path)
}

struct Scanner<'a> {
    b: &'a [u8],
    i: usize,
    line: usize,
}

impl Scanner<'_> {
    fn peek(&self) -> Option<u8> {
        self.b.get(self.i).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        if c == b'\n' {
            self.line += 1;
        }
        self.i += 1;
        Some(c)
    }

    fn ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.bump();
        }
    }

    fn string(&mut self) -> Option<String> {
        if self.bump()? != b'"' {
            return None;
        }
        let start = self.i;
        loop {
            match self.bump()? {
                b'\\' => {
                    self.bump()?;
                }
                b'"' => break,
                _ => {}
            }
        }
        std::str::from_utf8(&self.b[start..self.i - 1])
            .ok()
            .map(str::to_owned)
    }

    fn skip_value(&mut self) -> Option<()> {
        self.ws();
        match self.peek()? {
            b'"' => self.string().map(|_| ()),
            b'{' | b'[' => {
                let mut depth = 0usize;
                loop {
                    match self.peek()? {
                        b'"' => {
                            self.string()?;
                            continue;
                        }
                        b'{' | b'[' => depth += 1,
                        b'}' | b']' => {
                            depth -= 1;
                            if depth == 0 {
                                self.bump();
                                return Some(());
                            }
                        }
                        _ => {}
                    }
                    self.bump();
                }
            }
            _ => {
                while !matches!(
                    self.peek(),
                    None | Some(b',' | b']' | b'}' | b' ' | b'\t' | b'\r' | b'\n')
                ) {
                    self.bump();
                }
                Some(())
            }
        }
    }

    fn descend(&mut self, path: &[Seg]) -> Option<usize> {
        self.ws();
        let Some((head, rest)) = path.split_first() else {
            return Some(self.line);
        };
        match (*head, self.peek()?) {
            (Seg::Key(k), b'{') => {
                self.bump();
                loop {
                    self.ws();
                    if self.peek()? == b'}' {
                        return None;
                    }
                    let key = self.string()?;
                    self.ws();
                    if self.bump()? != b':' {
                        return None;
                    }
                    if key == k {
                        return self.descend(rest);
                    }
                    self.skip_value()?;
                    self.ws();
                    if self.bump()? != b',' {
                        return None;
                    }
                }
            }
            (Seg::Index(n), b'[') => {
                self.bump();
                for idx in 0.. {
                    self.ws();
                    if self.peek()? == b']' {
                        return None;
                    }
                    if idx == n {
                        return self.descend(rest);
                    }
                    self.skip_value()?;
                    self.ws();
                    if self.bump()? != b',' {
                        return None;
                    }
                }
                None
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
  "n_states": 1,
  "n_actions": 2,
  "gamma": 0.9,
  "reward": [[[1, 0], [0, 1]]],
  "transition": [[
    [[1.0], [1.0]],
    [[1.0], [0.5]]
  ]]
}"#;

    #[test]
    fn round_trip() {
        let text = GOOD.replace("[0.5]", "[1.0]");
        let game = GameFile::parse(&text, "mem").unwrap();
        let again = GameFile::parse(&GameFile::from_game(&game).to_json(), "mem").unwrap();
        assert_eq!(game, again);
    }

    #[test]
    fn bad_row_reports_its_line() {
        match GameFile::parse(GOOD, "mem") {
            Err(Error::GameFile { line, message, .. }) => {
                assert_eq!(line, 8, "{message}");
                assert!(message.contains("transition[0][1][1]"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_and_range_errors_carry_lines() {
        let broken = "{\n  \"n_states\": 1,\n  \"n_actions\": oops\n}";
        assert!(matches!(
            GameFile::parse(broken, "x"),
            Err(Error::GameFile { line: 3, .. })
        ));
        let bad_reward = GOOD.replace("[0.5]", "[1.0]").replace("[[[1, 0]", "[[[1.5, 0]");
        assert!(matches!(
            GameFile::parse(&bad_reward, "x"),
            Err(Error::GameFile { line: 5, .. })
        ));
        let bad_gamma = GOOD.replace("0.9", "1.0");
        assert!(matches!(
            GameFile::parse(&bad_gamma, "x"),
            Err(Error::GameFile { line: 4, .. })
        ));
    }
}
