//! Sudoku as a reasoning task.
//!
//! A state is a 9x9 board with 0 for blanks. The expert fills every blank that
//! has a single candidate, recomputing candidates after each fill; when no
//! such blank exists it guesses one value for a blank with the fewest
//! candidates. A board is consistent when no row, column or 3x3 block holds a
//! repeated nonzero value. Detailed verification labels are one per changed
//! cell, in row-major order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{RuleChecker, StepCorrupter, TaskError};
use crate::mtp::{
    Label, MtpError, Policy, Query, QueryPayload, ReasoningStep, Task, TaskKind, Transition, TransitionError,
    Verification,
};
use crate::rng::StreamRng;

const ALL: u16 = 0b11_1111_1110;

fn block(r: usize, c: usize) -> usize {
    (r / 3) * 3 + c / 3
}

/// A 9x9 board; 0 marks a blank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SudokuBoard {
    pub cells: [[u8; 9]; 9],
}

impl SudokuBoard {
    pub fn empty() -> Self {
        SudokuBoard::default()
    }

    pub fn from_cells(cells: [[u8; 9]; 9]) -> Self {
        SudokuBoard { cells }
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r][c]
    }

    pub fn blanks(&self) -> usize {
        self.cells.iter().flatten().filter(|&&v| v == 0).count()
    }

    pub fn is_complete(&self) -> bool {
        self.blanks() == 0
    }

    /// No repeated nonzero value in any row, column or block, and every value
    /// in `0..=9`.
    pub fn is_consistent(&self) -> bool {
        let mut rows = [0u16; 9];
        let mut cols = [0u16; 9];
        let mut blocks = [0u16; 9];
        for r in 0..9 {
            for c in 0..9 {
                let v = self.cells[r][c];
                if v == 0 {
                    continue;
                }
                if v > 9 {
                    return false;
                }
                let bit = 1u16 << v;
                let b = block(r, c);
                if rows[r] & bit != 0 || cols[c] & bit != 0 || blocks[b] & bit != 0 {
                    return false;
                }
                rows[r] |= bit;
                cols[c] |= bit;
                blocks[b] |= bit;
            }
        }
        true
    }

    /// True when the value at `(r, c)` repeats elsewhere in its row, column or
    /// block.
    pub fn conflicts_at(&self, r: usize, c: usize) -> bool {
        let v = self.cells[r][c];
        if v == 0 {
            return false;
        }
        if v > 9 {
            return true;
        }
        for i in 0..9 {
            if (i != c && self.cells[r][i] == v) || (i != r && self.cells[i][c] == v) {
                return true;
            }
        }
        let (br, bc) = (r / 3 * 3, c / 3 * 3);
        for rr in br..br + 3 {
            for cc in bc..bc + 3 {
                if (rr, cc) != (r, c) && self.cells[rr][cc] == v {
                    return true;
                }
            }
        }
        false
    }

    /// Bitmask (bits 1..=9) of values not yet used in the cell's row, column
    /// and block.
    pub fn candidates(&self, r: usize, c: usize) -> u16 {
        let mut used = 0u16;
        for i in 0..9 {
            used |= 1 << self.cells[r][i];
            used |= 1 << self.cells[i][c];
        }
        let (br, bc) = (r / 3 * 3, c / 3 * 3);
        for row in &self.cells[br..br + 3] {
            for &v in &row[bc..bc + 3] {
                used |= 1 << v;
            }
        }
        ALL & !used
    }

    /// Same nonzero values at the same places.
    pub fn extends(&self, givens: &SudokuBoard) -> bool {
        (0..9).all(|r| (0..9).all(|c| givens.cells[r][c] == 0 || givens.cells[r][c] == self.cells[r][c]))
    }

    /// Applies fills in order.
    pub fn with_fills(&self, fills: &[Fill]) -> SudokuBoard {
        let mut b = *self;
        for f in fills {
            b.cells[f.row as usize][f.col as usize] = f.value;
        }
        b
    }
}

/// Values in a candidate bitmask.
pub fn mask_values(mask: u16) -> impl Iterator<Item = u8> {
    (1..=9u8).filter(move |v| mask & (1 << v) != 0)
}

impl fmt::Display for SudokuBoard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, row) in self.cells.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            for v in row {
                write!(f, "{v}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for SudokuBoard {
    type Err = String;

    /// Reads 81 digits, ignoring whitespace; `.` is accepted for blanks.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let vals: Vec<u8> = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '.' => Ok(0),
                d if d.is_ascii_digit() => Ok(d as u8 - b'0'),
                other => Err(format!("invalid board character {other:?}")),
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 81 {
            return Err(format!("board has {} cells, expected 81", vals.len()));
        }
        let mut cells = [[0u8; 9]; 9];
        for (i, v) in vals.into_iter().enumerate() {
            cells[i / 9][i % 9] = v;
        }
        Ok(SudokuBoard { cells })
    }
}

impl Serialize for SudokuBoard {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SudokuBoard {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One cell assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fill {
    pub row: u8,
    pub col: u8,
    pub value: u8,
}

/// A Sudoku reasoning step: some fills and the board they produce.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SudokuStep {
    pub fills: Vec<Fill>,
    pub next: SudokuBoard,
    /// Some fill was a guess rather than a forced value.
    pub guess: bool,
}

impl ReasoningStep for SudokuStep {
    fn is_answer(&self) -> bool {
        self.next.is_complete()
    }
}

/// The expert step, or a dead-end error when some blank has no candidate.
pub fn sudoku_expert_step(board: &SudokuBoard, rng: &mut StreamRng) -> Result<SudokuStep, TaskError> {
    if board.is_complete() {
        return Err(TaskError::Terminal);
    }
    let mut best: Option<(u32, Vec<(usize, usize, u16)>)> = None;
    for r in 0..9 {
        for c in 0..9 {
            if board.cells[r][c] != 0 {
                continue;
            }
            let cand = board.candidates(r, c);
            let n = cand.count_ones();
            if n == 0 {
                return Err(TaskError::DeadEnd { row: r as u8, col: c as u8 });
            }
            match &mut best {
                Some((k, cells)) if *k == n => cells.push((r, c, cand)),
                Some((k, _)) if *k < n => {}
                _ => best = Some((n, vec![(r, c, cand)])),
            }
        }
    }
    let (fewest, cells) = best.ok_or(TaskError::Terminal)?;
    if fewest == 1 {
        let mut next = *board;
        let mut fills = Vec::new();
        // Fill the first singleton in row-major order, then rescan.
        'scan: loop {
            for r in 0..9 {
                for c in 0..9 {
                    if next.cells[r][c] != 0 {
                        continue;
                    }
                    let cand = next.candidates(r, c);
                    if cand.count_ones() == 1 {
                        let value = cand.trailing_zeros() as u8;
                        next.cells[r][c] = value;
                        fills.push(Fill { row: r as u8, col: c as u8, value });
                        continue 'scan;
                    }
                }
            }
            break;
        }
        return Ok(SudokuStep { fills, next, guess: false });
    }
    let (r, c, cand) = cells[rng.below(cells.len())];
    let values: Vec<u8> = mask_values(cand).collect();
    let value = values[rng.below(values.len())];
    let fill = Fill { row: r as u8, col: c as u8, value };
    Ok(SudokuStep { fills: vec![fill], next: board.with_fills(&[fill]), guess: true })
}

/// Returns the board written in the step after checking it matches the fills.
pub fn sudoku_apply(board: &SudokuBoard, step: &SudokuStep) -> Result<SudokuBoard, TransitionError> {
    if step.fills.iter().any(|f| f.row > 8 || f.col > 8 || f.value > 9) {
        return Err(TransitionError("fill outside the board".into()));
    }
    if board.with_fills(&step.fills) != step.next {
        return Err(TransitionError("next board does not equal the board plus its fills".into()));
    }
    Ok(step.next)
}

/// The Sudoku task.
#[derive(Debug, Clone, Copy, Default)]
pub struct SudokuTask;

impl Transition for SudokuTask {
    type State = SudokuBoard;
    type Step = SudokuStep;

    fn apply(&self, state: &SudokuBoard, step: &SudokuStep) -> Result<SudokuBoard, TransitionError> {
        sudoku_apply(state, step)
    }
}

impl Task for SudokuTask {
    fn kind(&self) -> TaskKind {
        TaskKind::Sudoku
    }

    fn initial_state(&self, query: &Query) -> Result<SudokuBoard, MtpError> {
        match &query.payload {
            QueryPayload::Sudoku { board } => Ok(*board),
            _ => Err(MtpError::TaskMismatch { query: query.task(), task: TaskKind::Sudoku }),
        }
    }

    fn check_answer(&self, query: &Query, answer: &SudokuStep) -> bool {
        match &query.payload {
            QueryPayload::Sudoku { board } => {
                answer.next.is_complete() && answer.next.is_consistent() && answer.next.extends(board)
            }
            _ => false,
        }
    }

    fn immediate_answer(&self, state: &SudokuBoard) -> Option<SudokuStep> {
        state.is_complete().then(|| SudokuStep { fills: Vec::new(), next: *state, guess: false })
    }
}

impl RuleChecker for SudokuTask {
    type State = SudokuBoard;
    type Step = SudokuStep;

    fn verify_binary(&self, state: &SudokuBoard, step: &SudokuStep) -> Verification {
        Verification::verdict(self.step_is_correct(state, step))
    }

    /// One label per changed cell, row-major: negative when the cell was not
    /// blank or its new value conflicts with the new board.
    fn verify_detailed(&self, state: &SudokuBoard, step: &SudokuStep) -> Verification {
        let mut labels = Vec::new();
        for r in 0..9 {
            for c in 0..9 {
                if state.cells[r][c] == step.next.cells[r][c] {
                    continue;
                }
                let ok = state.cells[r][c] == 0 && !step.next.conflicts_at(r, c);
                labels.push(if ok { Label::Positive } else { Label::Negative });
            }
        }
        if labels.is_empty() {
            // A step that changes nothing is judged as a whole.
            labels.push(if self.step_is_correct(state, step) { Label::Positive } else { Label::Negative });
        }
        Verification { labels }
    }

    fn step_is_correct(&self, state: &SudokuBoard, step: &SudokuStep) -> bool {
        step.next.extends(state) && step.next.is_consistent()
    }
}

/// Expert Sudoku policy. At a dead end it fills the dead cell with an
/// arbitrary value, which necessarily violates a rule.
#[derive(Debug, Clone, Copy, Default)]
pub struct SudokuExpert;

impl Policy<SudokuBoard, SudokuStep> for SudokuExpert {
    fn sample(&self, state: &SudokuBoard, rng: &mut StreamRng) -> SudokuStep {
        match sudoku_expert_step(state, rng) {
            Ok(step) => step,
            Err(TaskError::DeadEnd { row, col }) => {
                let fill = Fill { row, col, value: 1 + rng.below(9) as u8 };
                SudokuStep { fills: vec![fill], next: state.with_fills(&[fill]), guess: true }
            }
            Err(_) => SudokuStep { fills: Vec::new(), next: *state, guess: false },
        }
    }
}

/// Replaces the value of one uniformly chosen fill by a different digit.
#[derive(Debug, Clone, Copy, Default)]
pub struct SudokuCorrupter;

impl SudokuCorrupter {
    /// Returns the corrupted step and the row-major index of the changed
    /// cell among all changed cells.
    pub fn corrupt_indexed(&self, state: &SudokuBoard, step: &SudokuStep, rng: &mut StreamRng) -> (SudokuStep, usize) {
        if step.fills.is_empty() {
            return (step.clone(), 0);
        }
        let j = rng.below(step.fills.len());
        let mut fills = step.fills.clone();
        let old = fills[j].value;
        let mut v = 1 + rng.below(8) as u8;
        if v >= old {
            v += 1;
        }
        fills[j].value = v;
        let next = state.with_fills(&fills);
        let (tr, tc) = (fills[j].row, fills[j].col);
        let idx = (0..9usize)
            .flat_map(|r| (0..9usize).map(move |c| (r, c)))
            .filter(|&(r, c)| state.cells[r][c] != next.cells[r][c])
            .position(|(r, c)| (r as u8, c as u8) == (tr, tc))
            .unwrap_or(0);
        (SudokuStep { fills, next, guess: step.guess }, idx)
    }
}

impl StepCorrupter<SudokuBoard, SudokuStep> for SudokuCorrupter {
    fn corrupt(&self, state: &SudokuBoard, step: &SudokuStep, rng: &mut StreamRng) -> SudokuStep {
        self.corrupt_indexed(state, step, rng).0
    }
}

/// A complete valid board built by randomized backtracking.
pub fn random_solution(rng: &mut StreamRng) -> SudokuBoard {
    fn fill(board: &mut SudokuBoard, pos: usize, rng: &mut StreamRng) -> bool {
        if pos == 81 {
            return true;
        }
        let (r, c) = (pos / 9, pos % 9);
        let mut vals: Vec<u8> = mask_values(board.candidates(r, c)).collect();
        // Fisher-Yates with our own stream keeps generation reproducible.
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.below(i + 1));
        }
        for v in vals {
            board.cells[r][c] = v;
            if fill(board, pos + 1, rng) {
                return true;
            }
        }
        board.cells[r][c] = 0;
        false
    }
    let mut board = SudokuBoard::empty();
    let solved = fill(&mut board, 0, rng);
    debug_assert!(solved);
    board
}

/// Some completion of `board`, found by depth-first search on the cell with
/// the fewest candidates. `None` if the board cannot be completed.
pub fn solve(board: &SudokuBoard) -> Option<SudokuBoard> {
    fn search(board: &mut SudokuBoard) -> bool {
        let mut best: Option<(u32, usize, usize, u16)> = None;
        for r in 0..9 {
            for c in 0..9 {
                if board.cells[r][c] != 0 {
                    continue;
                }
                let cand = board.candidates(r, c);
                let n = cand.count_ones();
                if best.is_none_or(|(k, ..)| n < k) {
                    best = Some((n, r, c, cand));
                }
            }
        }
        let Some((_, r, c, cand)) = best else { return true };
        for v in mask_values(cand) {
            board.cells[r][c] = v;
            if search(board) {
                return true;
            }
        }
        board.cells[r][c] = 0;
        false
    }
    if !board.is_consistent() {
        return None;
    }
    let mut b = *board;
    search(&mut b).then_some(b)
}

/// The expert step with any guess replaced by the value `solution` holds,
/// so the path never dead-ends.
pub fn guided_expert_step(board: &SudokuBoard, solution: &SudokuBoard, rng: &mut StreamRng) -> Result<SudokuStep, TaskError> {
    let mut step = sudoku_expert_step(board, rng)?;
    if step.guess {
        for f in &mut step.fills {
            f.value = solution.cells[usize::from(f.row)][usize::from(f.col)];
        }
        step.next = board.with_fills(&step.fills);
    }
    Ok(step)
}

/// A puzzle with exactly `blanks` uniformly chosen blank cells, plus the
/// solution it was cut from.
pub fn random_puzzle(blanks: usize, rng: &mut StreamRng) -> (SudokuBoard, SudokuBoard) {
    let solution = random_solution(rng);
    let mut idx: Vec<usize> = (0..81).collect();
    for i in 0..blanks.min(81) {
        let j = i + rng.below(81 - i);
        idx.swap(i, j);
    }
    let mut puzzle = solution;
    for &i in &idx[..blanks.min(81)] {
        puzzle.cells[i / 9][i % 9] = 0;
    }
    (puzzle, solution)
}
