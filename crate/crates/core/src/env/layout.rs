//! Kitchen layouts: the static tile grid, spawn points and the lookup tables
//! shared by every world stepped on that layout.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Direction, Pos};

/// Default number of steps a full pot cooks before the soup is ready.
pub const DEFAULT_COOK_TIME: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileKind {
    Floor,
    Counter,
    OnionSource,
    DishSource,
    Pot,
    ServeWindow,
}

impl TileKind {
    pub fn symbol(self) -> char {
        match self {
            TileKind::Floor => '_',
            TileKind::Counter => 'X',
            TileKind::OnionSource => 'O',
            TileKind::DishSource => 'D',
            TileKind::Pot => 'P',
            TileKind::ServeWindow => 'S',
        }
    }

    fn name(self) -> &'static str {
        match self {
            TileKind::Floor => "Floor",
            TileKind::Counter => "Counter",
            TileKind::OnionSource => "OnionSource",
            TileKind::DishSource => "DishSource",
            TileKind::Pot => "Pot",
            TileKind::ServeWindow => "ServeWindow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("row {row}: expected {expected} columns, found {found}")]
    NonRectangular {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {col}: unknown character {ch:?}")]
    UnknownChar { row: usize, col: usize, ch: char },
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("spawn count {0} outside 2..4")]
    SpawnCount(usize),
    #[error("row {row}, column {col}: spawn {digit} appears twice")]
    DuplicateSpawn { row: usize, col: usize, digit: u32 },
    #[error("spawn digits must be 1..{count} without gaps; {digit} is missing")]
    SpawnGap { digit: usize, count: usize },
    #[error("row {row}, column {col}: floor on the kitchen boundary")]
    OpenBoundary { row: usize, col: usize },
    #[error("line {line}: bad header: {reason}")]
    BadHeader { line: usize, reason: String },
    #[error("empty grid")]
    Empty,
}

/// Nearest static station of one kind, seen from a floor cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Nearest {
    pub dx: i32,
    pub dy: i32,
}

/// Static station kinds whose nearest instance is precomputed per cell.
pub(crate) const STATIC_TARGETS: [TileKind; 4] = [
    TileKind::OnionSource,
    TileKind::DishSource,
    TileKind::Pot,
    TileKind::ServeWindow,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub cook_time: u32,
    tiles: Vec<TileKind>,
    spawn_points: Vec<Pos>,
    pot_cells: Vec<Pos>,
    counter_cells: Vec<Pos>,
    /// Per cell: index into `pot_cells` or `counter_cells`, `u16::MAX` otherwise.
    slot: Vec<u16>,
    /// Per cell, per entry of [`STATIC_TARGETS`]: offset to the nearest station.
    nearest_static: Vec<[Nearest; 4]>,
}

impl Layout {
    pub fn tile(&self, p: Pos) -> TileKind {
        self.tiles[p.y * self.width + p.x]
    }

    /// Tile at `p` moved one step in `dir`, if still inside the grid.
    pub fn neighbor(&self, p: Pos, dir: Direction) -> Option<Pos> {
        let (dx, dy) = dir.delta();
        let x = p.x as i64 + dx as i64;
        let y = p.y as i64 + dy as i64;
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(Pos::new(x as usize, y as usize))
        }
    }

    pub fn is_floor(&self, p: Pos) -> bool {
        self.tile(p) == TileKind::Floor
    }

    pub fn spawn_points(&self) -> &[Pos] {
        &self.spawn_points
    }

    pub fn max_agents(&self) -> usize {
        self.spawn_points.len()
    }

    pub fn pot_cells(&self) -> &[Pos] {
        &self.pot_cells
    }

    pub fn counter_cells(&self) -> &[Pos] {
        &self.counter_cells
    }

    pub fn cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Pos::new(x, y)))
    }

    pub fn cells_of(&self, kind: TileKind) -> impl Iterator<Item = Pos> + '_ {
        self.cells().filter(move |&p| self.tile(p) == kind)
    }

    pub fn pot_index(&self, p: Pos) -> Option<usize> {
        (self.tile(p) == TileKind::Pot).then(|| self.slot[p.y * self.width + p.x] as usize)
    }

    pub fn counter_index(&self, p: Pos) -> Option<usize> {
        (self.tile(p) == TileKind::Counter).then(|| self.slot[p.y * self.width + p.x] as usize)
    }

    pub(crate) fn nearest_static(&self, p: Pos) -> &[Nearest; 4] {
        &self.nearest_static[p.y * self.width + p.x]
    }

    /// Render back to the file alphabet (grid only, spawns included).
    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = Pos::new(x, y);
                match self.spawn_points.iter().position(|&s| s == p) {
                    Some(i) => out.push(char::from_digit(i as u32 + 1, 10).unwrap()),
                    None => out.push(self.tile(p).symbol()),
                }
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for Layout {
    type Err = LayoutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_layout(s)
    }
}

/// Parse a layout file: optional `key: value` header lines and `#` comments,
/// followed by a rectangular grid in the alphabet
/// `X` counter, `O` onion source, `D` dish source, `P` pot, `S` serve window,
/// `_` or space floor, `1`..`4` spawn points.
pub fn parse_layout(text: &str) -> Result<Layout, LayoutError> {
    let mut name = String::from("unnamed");
    let mut cook_time = DEFAULT_COOK_TIME;
    let mut rows: Vec<&str> = Vec::new();

    for (line_no, line) in text.lines().enumerate() {
        let trimmed_end = line.trim_end_matches(['\r', '\n']);
        if trimmed_end.trim().is_empty() || trimmed_end.trim_start().starts_with('#') {
            continue;
        }
        if rows.is_empty() {
            if let Some((key, value)) = trimmed_end.split_once(':') {
                let value = value.trim();
                match key.trim() {
                    "name" => name = value.to_string(),
                    "cook_time" => {
                        cook_time = value.parse().map_err(|_| LayoutError::BadHeader {
                            line: line_no + 1,
                            reason: format!("cook_time {value:?} is not a non-negative integer"),
                        })?
                    }
                    other => {
                        return Err(LayoutError::BadHeader {
                            line: line_no + 1,
                            reason: format!("unknown key {other:?}"),
                        })
                    }
                }
                continue;
            }
        }
        rows.push(trimmed_end);
    }

    if rows.is_empty() {
        return Err(LayoutError::Empty);
    }
    let width = rows[0].chars().count();
    let height = rows.len();
    let mut tiles = Vec::with_capacity(width * height);
    let mut spawns: Vec<Option<Pos>> = vec![None; 4];

    for (row, line) in rows.iter().enumerate() {
        let found = line.chars().count();
        if found != width {
            return Err(LayoutError::NonRectangular {
                row,
                expected: width,
                found,
            });
        }
        for (col, ch) in line.chars().enumerate() {
            let kind = match ch {
                'X' => TileKind::Counter,
                'O' => TileKind::OnionSource,
                'D' => TileKind::DishSource,
                'P' => TileKind::Pot,
                'S' => TileKind::ServeWindow,
                ' ' | '_' => TileKind::Floor,
                '1'..='4' => {
                    let digit = ch.to_digit(10).unwrap();
                    let slot = &mut spawns[digit as usize - 1];
                    if slot.is_some() {
                        return Err(LayoutError::DuplicateSpawn { row, col, digit });
                    }
                    *slot = Some(Pos::new(col, row));
                    TileKind::Floor
                }
                _ => return Err(LayoutError::UnknownChar { row, col, ch }),
            };
            let on_boundary = row == 0 || col == 0 || row + 1 == height || col + 1 == width;
            if on_boundary && kind == TileKind::Floor {
                return Err(LayoutError::OpenBoundary { row, col });
            }
            tiles.push(kind);
        }
    }

    for kind in STATIC_TARGETS {
        if !tiles.contains(&kind) {
            return Err(LayoutError::Missing(kind.name()));
        }
    }

    let count = spawns.iter().filter(|s| s.is_some()).count();
    if !(2..=4).contains(&count) {
        return Err(LayoutError::SpawnCount(count));
    }
    if let Some(gap) = spawns[..count].iter().position(Option::is_none) {
        return Err(LayoutError::SpawnGap {
            digit: gap + 1,
            count,
        });
    }
    let spawn_points: Vec<Pos> = spawns.into_iter().flatten().collect();

    Ok(build(name, width, height, cook_time, tiles, spawn_points))
}

fn build(
    name: String,
    width: usize,
    height: usize,
    cook_time: u32,
    tiles: Vec<TileKind>,
    spawn_points: Vec<Pos>,
) -> Layout {
    let mut slot = vec![u16::MAX; tiles.len()];
    let mut pot_cells = Vec::new();
    let mut counter_cells = Vec::new();
    for (i, kind) in tiles.iter().enumerate() {
        let p = Pos::new(i % width, i / width);
        match kind {
            TileKind::Pot => {
                slot[i] = pot_cells.len() as u16;
                pot_cells.push(p);
            }
            TileKind::Counter => {
                slot[i] = counter_cells.len() as u16;
                counter_cells.push(p);
            }
            _ => {}
        }
    }

    let nearest_static = (0..tiles.len())
        .map(|i| {
            let here = Pos::new(i % width, i / width);
            STATIC_TARGETS.map(|kind| {
                // Row-major scan keeps ties deterministic: first minimum wins.
                let mut best: Option<(usize, Pos)> = None;
                for (j, k) in tiles.iter().enumerate() {
                    if *k != kind {
                        continue;
                    }
                    let p = Pos::new(j % width, j / width);
                    let d = here.manhattan(p);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, p));
                    }
                }
                let (_, p) = best.expect("validated layout has every station kind");
                Nearest {
                    dx: p.x as i32 - here.x as i32,
                    dy: p.y as i32 - here.y as i32,
                }
            })
        })
        .collect();

    Layout {
        name,
        width,
        height,
        cook_time,
        tiles,
        spawn_points,
        pot_cells,
        counter_cells,
        slot,
        nearest_static,
    }
}

macro_rules! shipped {
    ($($name:literal),* $(,)?) => {
        /// Names of the layouts compiled into the crate.
        pub const SHIPPED_LAYOUTS: &[&str] = &[$($name),*];

        fn shipped_text(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../../layouts/", $name, ".layout"))),)*
                _ => None,
            }
        }
    };
}

shipped!(
    "cramped-2",
    "cramped-3",
    "ring-2",
    "ring-3",
    "open-3",
    "fc-2",
    "fc-3",
    "fc-4",
    "pl-2",
    "pl-3",
    "pl-4",
    "aa-2",
    "aa-3",
    "aa-4",
);

/// Load a shipped layout by name. Names are case-insensitive (`PL-3` == `pl-3`).
pub fn shipped_layout(name: &str) -> Option<Arc<Layout>> {
    let key = name.to_ascii_lowercase();
    let text = shipped_text(&key)?;
    Some(Arc::new(
        parse_layout(text).expect("shipped layouts are validated by tests"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_grid() {
        let layout = parse_layout("XXXXX\nXO1PX\nX2_SX\nXXDXX\n").unwrap();
        assert_eq!((layout.width, layout.height), (5, 4));
        assert_eq!(layout.cells_of(TileKind::OnionSource).count(), 1);
        assert_eq!(layout.cells_of(TileKind::Pot).count(), 1);
        assert_eq!(layout.cells_of(TileKind::ServeWindow).count(), 1);
        assert_eq!(layout.max_agents(), 2);
        assert_eq!(layout.spawn_points(), &[Pos::new(2, 1), Pos::new(1, 2)]);
        assert_eq!(layout.cook_time, DEFAULT_COOK_TIME);
    }

    #[test]
    fn missing_pot_is_reported() {
        let err = parse_layout("XXXXX\nXO1XX\nX2_SX\nXXDXX\n").unwrap_err();
        assert_eq!(err, LayoutError::Missing("Pot"));
        assert_eq!(err.to_string(), "missing Pot");
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(
            parse_layout("XXXXX\nXO1PX\nX2_SXX\nXXDXX\n").unwrap_err(),
            LayoutError::NonRectangular {
                row: 2,
                expected: 5,
                found: 6
            }
        );
        assert_eq!(
            parse_layout("XXXXX\nXO1PX\nX2?SX\nXXDXX\n").unwrap_err(),
            LayoutError::UnknownChar {
                row: 2,
                col: 2,
                ch: '?'
            }
        );
        assert_eq!(
            parse_layout("XXXXX\n_O1PX\nX2_SX\nXXDXX\n").unwrap_err(),
            LayoutError::OpenBoundary { row: 1, col: 0 }
        );
        assert_eq!(
            parse_layout("XXXXX\nXO1PX\nX__SX\nXXDXX\n").unwrap_err(),
            LayoutError::SpawnCount(1)
        );
        assert_eq!(
            parse_layout("XXXXX\nXO1PX\nX3_SX\nXXDXX\n").unwrap_err(),
            LayoutError::SpawnGap { digit: 2, count: 2 }
        );
    }

    #[test]
    fn header_sets_cook_time_and_name() {
        let layout = parse_layout("# comment\nname: tiny\ncook_time: 7\nXXXXX\nXO1PX\nX2_SX\nXXDXX\n")
            .unwrap();
        assert_eq!(layout.name, "tiny");
        assert_eq!(layout.cook_time, 7);
        assert!(matches!(
            parse_layout("speed: 3\nXXXXX\nXO1PX\nX2_SX\nXXDXX\n"),
            Err(LayoutError::BadHeader { line: 1, .. })
        ));
    }

    #[test]
    fn every_shipped_layout_is_valid_and_round_trips() {
        for name in SHIPPED_LAYOUTS {
            let layout = shipped_layout(name).unwrap();
            assert_eq!(&layout.name, name);
            let suffix: usize = name.rsplit('-').next().unwrap().parse().unwrap();
            assert_eq!(layout.max_agents(), suffix, "{name}");
            let again = parse_layout(&format!("name: {name}\n{}", layout.render())).unwrap();
            assert_eq!(again.render(), layout.render());
        }
    }

    #[test]
    fn pipeline_three_geometry() {
        let layout = shipped_layout("PL-3").unwrap();
        assert_eq!(layout.max_agents(), 3);
        assert_eq!(
            layout.render(),
            "XXXXXXXXXX\nO__X__X__P\nO1_X_2X_3P\nX__X__X__D\nXXXXXXXXSX\n"
        );
    }
}
