use xtask::Worker;

pub const MAX_N: usize = 16;

/// Counts n-queens solutions. Rows above `task_depth` fan out one task per
/// legal column; deeper rows are searched serially with bitmasks.
pub fn nqueens(w: &Worker<'_>, n: usize, task_depth: usize) -> u64 {
    assert!((1..=MAX_N).contains(&n), "n must be in 1..=16");
    solve(w, n, 0, Board::default(), task_depth)
}

#[derive(Clone, Copy, Default)]
struct Board {
    cols: u32,
    diag: u32,
    anti: u32,
}

impl Board {
    fn free(&self, n: usize) -> u32 {
        !(self.cols | self.diag | self.anti) & ((1u32 << n) - 1)
    }

    fn place(&self, bit: u32) -> Board {
        Board {
            cols: self.cols | bit,
            diag: (self.diag | bit) << 1,
            anti: (self.anti | bit) >> 1,
        }
    }
}

fn solve(w: &Worker<'_>, n: usize, row: usize, board: Board, task_depth: usize) -> u64 {
    if row == n {
        return 1;
    }
    if row >= task_depth {
        return count_serial(n, row, board);
    }
    let mut counts = [0u64; MAX_N];
    let free = board.free(n);
    w.scope(|s| {
        for (col, slot) in counts.iter_mut().enumerate().take(n) {
            let bit = 1u32 << col;
            if free & bit != 0 {
                let next = board.place(bit);
                s.spawn(move |w| *slot = solve(w, n, row + 1, next, task_depth));
            }
        }
    });
    counts.iter().sum()
}

fn count_serial(n: usize, row: usize, board: Board) -> u64 {
    if row == n {
        return 1;
    }
    let mut free = board.free(n);
    let mut total = 0;
    while free != 0 {
        let bit = free & free.wrapping_neg();
        free ^= bit;
        total += count_serial(n, row + 1, board.place(bit));
    }
    total
}
